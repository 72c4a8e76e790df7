//! Synthetic zero-shot classification with per-sample test-time tuning.
//!
//! Class prototypes are drawn uniformly on the sphere. Images are noisy
//! copies of their class prototype; the initial class (text) features are
//! the prototypes pulled toward one shared direction, which reproduces the
//! strong mutual correlation of real text embeddings. Every test sample
//! starts from the same initial features, tunes them against its own
//! confidence loss plus the dispersion regularizer, and is then classified.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calibration::{compute_ece, CalibrationReport, PredictionRecord, DEFAULT_BINS};
use crate::error::{Error, Result};
use crate::objectives::{
    regularizer_value, CombinedLossConfig, MinMode, Regularizer, TptMode, ZeroShotHead,
};
use crate::optim::{tune_features, OptimizerConfig};
use crate::sphere::{cosine_matrix, normalize, FeatureMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_classes: usize,
    pub dim: usize,
    pub n_samples: usize,
    /// Per-coordinate std of the gaussian noise added to image prototypes.
    pub noise_sigma: f64,
    /// Weight of the shared direction mixed into every initial class feature.
    pub text_bias: f64,
    pub temperature: f64,
    pub lambda: f64,
    pub regularizer: Regularizer,
    pub tpt_mode: TptMode,
    pub min_mode: MinMode,
    pub n_bins: usize,
    pub master_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 64,
            n_samples: 64,
            noise_sigma: 0.4,
            text_bias: 1.5,
            temperature: 0.01,
            lambda: 80.0,
            regularizer: Regularizer::AngularDiversity,
            tpt_mode: TptMode::MaxLogProb,
            min_mode: MinMode::Hard,
            n_bins: DEFAULT_BINS,
            master_seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::TooFewPoints(self.n_classes));
        }
        if self.dim < 2 {
            return Err(Error::UnsupportedDimension(self.dim));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidConfig("noise_sigma must be > 0".into()));
        }
        if !(self.text_bias >= 0.0 && self.text_bias.is_finite()) {
            return Err(Error::InvalidConfig("text_bias must be >= 0".into()));
        }
        if self.n_bins == 0 {
            return Err(Error::InvalidConfig("n_bins must be >= 1".into()));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> CombinedLossConfig {
        CombinedLossConfig {
            lambda: self.lambda,
            temperature: self.temperature,
            regularizer: self.regularizer,
            tpt_mode: self.tpt_mode,
            min_mode: self.min_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestSample {
    /// Unit-norm image feature.
    pub image: Array1<f64>,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct World {
    pub prototypes: FeatureMatrix,
    pub text_features: FeatureMatrix,
    pub samples: Vec<TestSample>,
}

fn gaussian_vec<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal))
}

fn unit(v: Array1<f64>) -> Result<Array1<f64>> {
    let r = v.dot(&v).sqrt();
    if !(r > crate::sphere::ROW_NORM_FLOOR) {
        return Err(Error::ZeroNormRow(0));
    }
    Ok(v / r)
}

/// Everything here is a function of `master_seed` and the sizes.
pub fn generate_world(cfg: &SimConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed);
    let prototypes = normalize(&FeatureMatrix::random_normal(cfg.n_classes, cfg.dim, &mut rng)?)?.to_features();
    let shared = unit(gaussian_vec(cfg.dim, &mut rng))?;
    let mut text = prototypes.data().clone();
    for mut row in text.rows_mut() {
        row.scaled_add(cfg.text_bias, &shared);
    }
    let text_features = normalize(&FeatureMatrix::new(text)?)?.to_features();
    let samples = (0..cfg.n_samples)
        .map(|_| {
            let label = rng.random_range(0..cfg.n_classes);
            let noise = gaussian_vec(cfg.dim, &mut rng);
            let image = unit(&prototypes.row(label) + &(noise * cfg.noise_sigma))?;
            Ok(TestSample { image, label })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(World {
        prototypes,
        text_features,
        samples,
    })
}

/// Mean and population std of the off-diagonal cosines of a feature matrix.
pub fn cosine_stats(features: &FeatureMatrix) -> Result<(f64, f64)> {
    let off = cosine_matrix(&normalize(features)?).off_diagonal();
    Ok(mean_std(&off))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean over points of the nearest-neighbour angle.
pub fn mean_min_angle(features: &FeatureMatrix) -> Result<f64> {
    Ok(-regularizer_value(Regularizer::AngularDiversity, features, MinMode::Hard)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub calibration: CalibrationReport,
    /// Average over samples of the tuned features' mean nearest-neighbour angle.
    pub mean_min_angle: f64,
    /// Average over samples of the per-sample mean off-diagonal cosine.
    pub cosine_mean: f64,
    /// Average over samples of the per-sample std of off-diagonal cosines.
    pub cosine_std: f64,
    /// Std across samples of the per-sample mean off-diagonal cosine.
    pub cosine_mean_spread: f64,
    pub mean_cosine_stats: Vec<CosineStats>,
    pub records: Vec<PredictionRecord>,
}

/// Classifies every sample with the untuned features.
pub fn zero_shot_baseline(world: &World, cfg: &SimConfig) -> Result<CalibrationReport> {
    let records = world
        .samples
        .iter()
        .map(|s| {
            let head = ZeroShotHead::single(s.image.clone())?;
            let p = head.probabilities(&world.text_features, cfg.temperature)?;
            PredictionRecord::new(p.row(0).to_vec(), s.label)
        })
        .collect::<Result<Vec<_>>>()?;
    compute_ece(&records, cfg.n_bins)
}

/// Per-sample episodic tuning: each sample starts from the world's initial
/// features, so samples are independent of one another and of their order.
pub fn run_episode(world: &World, cfg: &SimConfig, opt: &OptimizerConfig) -> Result<SimResult> {
    cfg.validate()?;
    if world.samples.is_empty() {
        return Err(Error::EmptyLog);
    }
    let loss_cfg = cfg.loss_config();
    let mut records = Vec::with_capacity(world.samples.len());
    let mut stats = Vec::with_capacity(world.samples.len());
    let mut angles = Vec::with_capacity(world.samples.len());
    for sample in &world.samples {
        let head = ZeroShotHead::single(sample.image.clone())?;
        let tuned = tune_features(&world.text_features, &head, opt, &loss_cfg)?.features;
        let p = head.probabilities(&tuned, cfg.temperature)?;
        records.push(PredictionRecord::new(p.row(0).to_vec(), sample.label)?);
        let (mean, std) = cosine_stats(&tuned)?;
        stats.push(CosineStats { mean, std });
        angles.push(mean_min_angle(&tuned)?);
    }
    let n = stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    let (cosine_mean, cosine_mean_spread) = mean_std(&means);
    Ok(SimResult {
        calibration: compute_ece(&records, cfg.n_bins)?,
        mean_min_angle: angles.iter().sum::<f64>() / n,
        cosine_mean,
        cosine_std: stats.iter().map(|s| s.std).sum::<f64>() / n,
        cosine_mean_spread,
        mean_cosine_stats: stats,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub n_classes: usize,
    pub dim: usize,
    pub regularizer: Regularizer,
    pub ece: f64,
    pub accuracy: f64,
    pub mean_min_angle: f64,
    pub cosine_mean: f64,
    pub cosine_std: f64,
    pub cosine_mean_spread: f64,
}

/// Matched episodes for every regularizer on one shared world per `(N, D)`.
/// The regimes must contain at least one `N > D` and one `N < D` case.
pub fn regime_experiment(
    regimes: &[(usize, usize)],
    template: &SimConfig,
    opt: &OptimizerConfig,
) -> Result<Vec<RegimeRow>> {
    if !regimes.iter().any(|&(n, d)| n > d) || !regimes.iter().any(|&(n, d)| n < d) {
        return Err(Error::InvalidConfig(
            "regimes need at least one N > D and one N < D case".into(),
        ));
    }
    let mut rows = Vec::with_capacity(regimes.len() * Regularizer::ALL.len());
    for &(n, d) in regimes {
        let base = SimConfig {
            n_classes: n,
            dim: d,
            ..template.clone()
        };
        let world = generate_world(&base)?;
        for regularizer in Regularizer::ALL {
            let cfg = SimConfig {
                regularizer,
                ..base.clone()
            };
            let r = run_episode(&world, &cfg, opt)?;
            rows.push(RegimeRow {
                n_classes: n,
                dim: d,
                regularizer,
                ece: r.calibration.ece,
                accuracy: r.calibration.accuracy,
                mean_min_angle: r.mean_min_angle,
                cosine_mean: r.cosine_mean,
                cosine_std: r.cosine_std,
                cosine_mean_spread: r.cosine_mean_spread,
            });
        }
    }
    Ok(rows)
}

pub fn write_regime_csv<W: Write>(rows: &[RegimeRow], mut w: W) -> Result<()> {
    writeln!(
        w,
        "n_classes,dim,regularizer,ece,accuracy,mean_min_angle,cosine_mean,cosine_std,cosine_mean_spread"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.n_classes,
            r.dim,
            r.regularizer.name(),
            r.ece,
            r.accuracy,
            r.mean_min_angle,
            r.cosine_mean,
            r.cosine_std,
            r.cosine_mean_spread
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub mean_min_angle: f64,
}

/// One episode per lambda on a shared world.
pub fn pareto_sweep(
    lambdas: &[f64],
    world: &World,
    cfg: &SimConfig,
    opt: &OptimizerConfig,
) -> Result<Vec<ParetoRow>> {
    if let Some(l) = lambdas.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {l}")));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let r = run_episode(world, &SimConfig { lambda, ..cfg.clone() }, opt)?;
            Ok(ParetoRow {
                lambda,
                accuracy: r.calibration.accuracy,
                ece: r.calibration.ece,
                mean_min_angle: r.mean_min_angle,
            })
        })
        .collect()
}

pub fn write_pareto_csv<W: Write>(rows: &[ParetoRow], mut w: W) -> Result<()> {
    writeln!(w, "lambda,accuracy,ece,mean_min_angle")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.lambda, r.accuracy, r.ece, r.mean_min_angle)?;
    }
    Ok(())
}

/// Image features of a world as one B x D matrix.
pub fn image_matrix(world: &World) -> Array2<f64> {
    let d = world.prototypes.dim();
    let mut out = Array2::zeros((world.samples.len(), d));
    for (mut row, s) in out.rows_mut().into_iter().zip(&world.samples) {
        row.assign(&s.image);
    }
    out
}
