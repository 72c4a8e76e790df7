//! Dispersion objectives over a feature matrix, the test-time confidence loss,
//! and their weighted combination.
//!
//! Every objective is a loss to be minimized and returns its gradient with
//! respect to the raw feature matrix; row normalization is part of the graph.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{angle_matrix, cosine_matrix, normalize, FeatureMatrix};

/// Angles within this of the row minimum count as tied argmin partners.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Probabilities at or below this are treated as degenerate.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub grad: Array2<f64>,
}

impl ObjectiveEval {
    fn zero(shape: (usize, usize)) -> Self {
        Self {
            value: 0.0,
            grad: Array2::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    Atfd,
    Orthogonality,
    AngularDiversity,
}

impl Regularizer {
    pub const ALL: [Regularizer; 4] = [
        Regularizer::None,
        Regularizer::Atfd,
        Regularizer::Orthogonality,
        Regularizer::AngularDiversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Atfd => "atfd",
            Regularizer::Orthogonality => "orthogonality",
            Regularizer::AngularDiversity => "angular_diversity",
        }
    }
}

/// How the per-row minimum angle is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MinMode {
    /// Exact minimum; the subgradient is averaged over tied partners.
    #[default]
    Hard,
    /// `-(1/beta) log sum exp(-beta theta)`, a smooth lower bound on the minimum.
    Smooth { beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TptMode {
    /// Mean of `-log max_k p_k`.
    #[default]
    MaxLogProb,
    /// Mean Shannon entropy `-sum_k p_k log p_k`.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CombinedLossConfig {
    pub lambda: f64,
    pub temperature: f64,
    pub regularizer: Regularizer,
    pub tpt_mode: TptMode,
    pub min_mode: MinMode,
}

impl Default for CombinedLossConfig {
    fn default() -> Self {
        Self {
            lambda: 80.0,
            temperature: 0.01,
            regularizer: Regularizer::AngularDiversity,
            tpt_mode: TptMode::MaxLogProb,
            min_mode: MinMode::Hard,
        }
    }
}

impl CombinedLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if let MinMode::Smooth { beta } = self.min_mode {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidConfig(format!("smooth-min beta must be > 0, got {beta}")));
            }
        }
        Ok(())
    }
}

fn d_arccos(c: f64) -> f64 {
    -1.0 / (1.0 - c * c).sqrt()
}

/// Negated angular diversity: `-(1/N) sum_i min_{j != i} theta_ij`.
pub fn angular_diversity(features: &FeatureMatrix) -> Result<ObjectiveEval> {
    angular_diversity_with(features, MinMode::Hard)
}

pub fn angular_diversity_with(features: &FeatureMatrix, mode: MinMode) -> Result<ObjectiveEval> {
    let n = features.n_classes();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = normalize(features)?;
    let cos = cosine_matrix(&nf);
    let theta = angle_matrix(&cos);
    let th = theta.data();
    let inv_n = 1.0 / n as f64;

    // d(-AD)/d(theta_ij), ordered by the row whose minimum uses the pair
    let mut d_theta = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    for i in 0..n {
        let min = theta.nearest(i);
        match mode {
            MinMode::Hard => {
                total += min;
                let ties: Vec<usize> = (0..n)
                    .filter(|&j| j != i && th[[i, j]] - min <= TIE_TOLERANCE)
                    .collect();
                let w = inv_n / ties.len() as f64;
                for j in ties {
                    d_theta[[i, j]] -= w;
                }
            }
            MinMode::Smooth { beta } => {
                let mut z = 0.0;
                for j in (0..n).filter(|&j| j != i) {
                    z += (-beta * (th[[i, j]] - min)).exp();
                }
                total += min - z.ln() / beta;
                for j in (0..n).filter(|&j| j != i) {
                    d_theta[[i, j]] -= inv_n * (-beta * (th[[i, j]] - min)).exp() / z;
                }
            }
        }
    }

    let c = cos.data();
    let pair = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            0.0
        } else {
            (d_theta[[i, j]] + d_theta[[j, i]]) * d_arccos(c[[i, j]])
        }
    });
    let grad_hat = cos.backward(&nf, &pair);
    Ok(ObjectiveEval {
        value: -total * inv_n,
        grad: nf.backward(&grad_hat),
    })
}

/// Mean squared off-diagonal cosine, `(2 / (N (N-1))) sum_{i<j} Cos_ij^2`.
pub fn orthogonality_loss(features: &FeatureMatrix) -> Result<ObjectiveEval> {
    let n = features.n_classes();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = normalize(features)?;
    let cos = cosine_matrix(&nf);
    let c = cos.data();
    let scale = 2.0 / (n * (n - 1)) as f64;
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += c[[i, j]] * c[[i, j]];
        }
    }
    let pair = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 2.0 * scale * c[[i, j]] });
    let grad_hat = cos.backward(&nf, &pair);
    Ok(ObjectiveEval {
        value: scale * sum,
        grad: nf.backward(&grad_hat),
    })
}

/// Negated mean distance of the normalized rows from their centroid.
pub fn atfd_loss(features: &FeatureMatrix) -> Result<ObjectiveEval> {
    let n = features.n_classes();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let nf = normalize(features)?;
    let e = nf.data();
    let centroid = e.mean_axis(Axis(0)).expect("n >= 2");
    let inv_n = 1.0 / n as f64;

    let mut units = Array2::<f64>::zeros(e.dim());
    let mut total = 0.0;
    for (i, row) in e.rows().into_iter().enumerate() {
        let diff = &row - &centroid;
        let dist = diff.dot(&diff).sqrt();
        total += dist;
        // zero distance: take the zero subgradient
        if dist > 0.0 {
            units.row_mut(i).assign(&(diff / dist));
        }
    }
    let mean_unit = units.mean_axis(Axis(0)).expect("n >= 2");
    let grad_hat = (&units - &mean_unit) * (-inv_n);
    Ok(ObjectiveEval {
        value: -total * inv_n,
        grad: nf.backward(&grad_hat),
    })
}

/// Loss and gradient of the selected dispersion regularizer.
pub fn regularizer_loss(
    regularizer: Regularizer,
    features: &FeatureMatrix,
    mode: MinMode,
) -> Result<ObjectiveEval> {
    match regularizer {
        Regularizer::None => Ok(ObjectiveEval::zero(features.data().dim())),
        Regularizer::Atfd => atfd_loss(features),
        Regularizer::Orthogonality => orthogonality_loss(features),
        Regularizer::AngularDiversity => angular_diversity_with(features, mode),
    }
}

/// Value of the selected regularizer without building a gradient. Uses the
/// same clamped kernels as the gradient path.
pub fn regularizer_value(regularizer: Regularizer, features: &FeatureMatrix, mode: MinMode) -> Result<f64> {
    let n = features.n_classes();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let inv_n = 1.0 / n as f64;
    match regularizer {
        Regularizer::None => Ok(0.0),
        Regularizer::AngularDiversity => {
            let theta = angle_matrix(&cosine_matrix(&normalize(features)?));
            let th = theta.data();
            let mut total = 0.0;
            for i in 0..n {
                let min = theta.nearest(i);
                total += match mode {
                    MinMode::Hard => min,
                    MinMode::Smooth { beta } => {
                        let z: f64 = (0..n)
                            .filter(|&j| j != i)
                            .map(|j| (-beta * (th[[i, j]] - min)).exp())
                            .sum();
                        min - z.ln() / beta
                    }
                };
            }
            Ok(-total * inv_n)
        }
        Regularizer::Orthogonality => {
            let cos = cosine_matrix(&normalize(features)?);
            let sum: f64 = cos.off_diagonal().iter().map(|c| c * c).sum();
            Ok(2.0 * sum / (n * (n - 1)) as f64)
        }
        Regularizer::Atfd => {
            let nf = normalize(features)?;
            let centroid = nf.data().mean_axis(Axis(0)).expect("n >= 2");
            let total: f64 = nf
                .data()
                .rows()
                .into_iter()
                .map(|row| {
                    let diff = &row - &centroid;
                    diff.dot(&diff).sqrt()
                })
                .sum();
            Ok(-total * inv_n)
        }
    }
}

/// Value of a confidence loss and its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TptEval {
    pub value: f64,
    pub grad_logits: Array2<f64>,
}

/// Index of the largest entry, ties to the lowest index.
pub fn argmax(v: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, x) in v.into_iter().enumerate() {
        if x > best_val {
            best = k;
            best_val = x;
        }
    }
    best
}

fn tpt_from_log_probs(probs: &Array2<f64>, log_probs: &Array2<f64>, mode: TptMode) -> TptEval {
    let batch = probs.nrows();
    let inv_b = 1.0 / batch as f64;
    let mut grad = Array2::<f64>::zeros(probs.dim());
    let mut total = 0.0;
    for b in 0..batch {
        let p = probs.row(b);
        let lp = log_probs.row(b);
        match mode {
            TptMode::MaxLogProb => {
                let m = argmax(p.iter().copied());
                total += -lp[m];
                let mut g = grad.row_mut(b);
                g.assign(&p);
                g[m] -= 1.0;
            }
            TptMode::Entropy => {
                let h: f64 = -p.iter().zip(lp.iter()).map(|(&pk, &lk)| pk * lk).sum::<f64>();
                total += h;
                for k in 0..p.len() {
                    grad[[b, k]] = -p[k] * (lp[k] + h);
                }
            }
        }
    }
    grad *= inv_b;
    TptEval {
        value: total * inv_b,
        grad_logits: grad,
    }
}

/// Test-time confidence loss over a batch of probability vectors (one per row).
pub fn tpt_loss(probabilities: &Array2<f64>, mode: TptMode) -> Result<TptEval> {
    if probabilities.nrows() == 0 {
        return Err(Error::EmptyLog);
    }
    for (b, row) in probabilities.rows().into_iter().enumerate() {
        if let Some(&value) = row.iter().find(|&&p| !(p > PROB_FLOOR)) {
            return Err(Error::DegenerateProbability { record: b, value });
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbabilities {
                record: b,
                reason: format!("sums to {s}"),
            });
        }
    }
    let log_probs = probabilities.mapv(f64::ln);
    Ok(tpt_from_log_probs(probabilities, &log_probs, mode))
}

/// Row-wise softmax computed with the max-shift.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax_rows(logits).mapv(f64::exp)
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|z| z - lse);
    }
    out
}

/// Same loss as [`tpt_loss`] but starting from logits, so vanishing
/// probabilities never need a log of zero.
pub fn tpt_loss_from_logits(logits: &Array2<f64>, mode: TptMode) -> Result<TptEval> {
    if logits.nrows() == 0 {
        return Err(Error::EmptyLog);
    }
    let log_probs = log_softmax_rows(logits).mapv(|l| l.max(PROB_FLOOR.ln()));
    let probs = softmax_rows(logits);
    Ok(tpt_from_log_probs(&probs, &log_probs, mode))
}

/// Anything that turns the current feature matrix into the confidence term
/// of the combined loss.
pub trait ProbabilitySource {
    /// Confidence loss and its gradient with respect to the raw features.
    fn tpt_term(&self, features: &FeatureMatrix, cfg: &CombinedLossConfig) -> Result<ObjectiveEval>;
}

/// A fixed batch of probabilities that does not depend on the features.
#[derive(Debug, Clone)]
pub struct FixedProbabilities(pub Array2<f64>);

impl ProbabilitySource for FixedProbabilities {
    fn tpt_term(&self, features: &FeatureMatrix, cfg: &CombinedLossConfig) -> Result<ObjectiveEval> {
        let eval = tpt_loss(&self.0, cfg.tpt_mode)?;
        Ok(ObjectiveEval {
            value: eval.value,
            grad: Array2::zeros(features.data().dim()),
        })
    }
}

/// Zero-shot head: logits are cosine similarities between image features and
/// the class feature rows, divided by the temperature.
#[derive(Debug, Clone)]
pub struct ZeroShotHead {
    images: Array2<f64>,
}

impl ZeroShotHead {
    /// `images` is B x D; each row is normalized here.
    pub fn new(images: Array2<f64>) -> Result<Self> {
        let mut images = images;
        for (b, mut row) in images.rows_mut().into_iter().enumerate() {
            let r = row.dot(&row).sqrt();
            if !(r > crate::sphere::ROW_NORM_FLOOR) {
                return Err(Error::ZeroNormRow(b));
            }
            row /= r;
        }
        Ok(Self { images })
    }

    pub fn single(image: Array1<f64>) -> Result<Self> {
        let d = image.len();
        Self::new(image.into_shape_with_order((1, d)).expect("1 x d"))
    }

    pub fn images(&self) -> &Array2<f64> {
        &self.images
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.images.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (features.n_classes(), self.images.ncols()),
                actual: features.data().dim(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, features: &FeatureMatrix, temperature: f64) -> Result<Array2<f64>> {
        self.check_dim(features)?;
        let nf = normalize(features)?;
        Ok(self.images.dot(&nf.data().t()) / temperature)
    }

    pub fn probabilities(&self, features: &FeatureMatrix, temperature: f64) -> Result<Array2<f64>> {
        Ok(softmax_rows(&self.logits(features, temperature)?))
    }
}

impl ProbabilitySource for ZeroShotHead {
    fn tpt_term(&self, features: &FeatureMatrix, cfg: &CombinedLossConfig) -> Result<ObjectiveEval> {
        self.check_dim(features)?;
        let nf = normalize(features)?;
        let logits = self.images.dot(&nf.data().t()) / cfg.temperature;
        let eval = tpt_loss_from_logits(&logits, cfg.tpt_mode)?;
        let grad_hat = eval.grad_logits.t().dot(&self.images) / cfg.temperature;
        Ok(ObjectiveEval {
            value: eval.value,
            grad: nf.backward(&grad_hat),
        })
    }
}

/// Combined loss with its two components kept apart for tracing.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedEval {
    pub value: f64,
    pub tpt_term: f64,
    pub reg_term: f64,
    pub grad: Array2<f64>,
}

/// `tpt + lambda * regularizer`. The regularizer is skipped entirely when
/// lambda is zero.
pub fn combined_loss(
    features: &FeatureMatrix,
    source: &dyn ProbabilitySource,
    cfg: &CombinedLossConfig,
) -> Result<CombinedEval> {
    cfg.validate()?;
    let tpt = source.tpt_term(features, cfg)?;
    if cfg.lambda == 0.0 || cfg.regularizer == Regularizer::None {
        return Ok(CombinedEval {
            value: tpt.value,
            tpt_term: tpt.value,
            reg_term: 0.0,
            grad: tpt.grad,
        });
    }
    let reg = regularizer_loss(cfg.regularizer, features, cfg.min_mode)?;
    let mut grad = tpt.grad;
    grad.scaled_add(cfg.lambda, &reg.grad);
    Ok(CombinedEval {
        value: tpt.value + cfg.lambda * reg.value,
        tpt_term: tpt.value,
        reg_term: reg.value,
        grad,
    })
}
