//! Projected AdamW over feature or prompt parameters.
//!
//! Features live on the unit sphere: after each ambient AdamW step the rows
//! are renormalized. Prompt parameters are unconstrained and reach feature
//! space through a frozen linear encoder.

use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{combined_loss, CombinedLossConfig, MinMode, ProbabilitySource, Regularizer};
use crate::sphere::{min_pairwise_angle, normalize, FeatureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub renormalize_each_step: bool,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            steps: 1,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            renormalize_each_step: true,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Rows are feature vectors on the unit sphere.
    Features,
    /// Unconstrained prompt parameters.
    Prompts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub params: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub step_count: u64,
    pub kind: ParamKind,
}

impl OptimizerState {
    pub fn new(params: Array2<f64>, kind: ParamKind) -> Self {
        let shape = params.dim();
        Self {
            params,
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
            step_count: 0,
            kind,
        }
    }

    /// One bias-corrected AdamW update with decoupled weight decay. Feature
    /// parameters are projected back to the sphere when configured.
    pub fn adamw_step(&mut self, grad: &Array2<f64>, cfg: &OptimizerConfig) -> Result<()> {
        if grad.dim() != self.params.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.params.dim(),
                actual: grad.dim(),
            });
        }
        if let Some(((row, col), _)) = grad.indexed_iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { row, col });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let lr = cfg.learning_rate;
        let decay = 1.0 - lr * cfg.weight_decay;
        ndarray::Zip::from(&mut self.params)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
            });
        if self.kind == ParamKind::Features && cfg.renormalize_each_step {
            for (i, mut row) in self.params.rows_mut().into_iter().enumerate() {
                let r = row.dot(&row).sqrt();
                if !(r > crate::sphere::ROW_NORM_FLOOR) {
                    return Err(Error::ZeroNormRow(i));
                }
                row /= r;
            }
        }
        Ok(())
    }
}

/// Loss components recorded before each update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub total_loss: f64,
    pub tpt_term: f64,
    pub reg_term: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "step,total_loss,tpt_term,reg_term")?;
    for r in trace {
        writeln!(w, "{},{:.9},{:.9},{:.9}", r.step, r.total_loss, r.tpt_term, r.reg_term)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub features: FeatureMatrix,
    pub trace: Vec<TraceRow>,
}

/// Minimizes the combined loss directly over the feature rows.
pub fn tune_features(
    initial: &FeatureMatrix,
    source: &dyn ProbabilitySource,
    cfg: &OptimizerConfig,
    loss_cfg: &CombinedLossConfig,
) -> Result<TuneOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut state = OptimizerState::new(initial.data().clone(), ParamKind::Features);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let features = FeatureMatrix::new(state.params.clone())?;
        let eval = combined_loss(&features, source, loss_cfg)?;
        trace.push(TraceRow {
            step,
            total_loss: eval.value,
            tpt_term: eval.tpt_term,
            reg_term: eval.reg_term,
        });
        state.adamw_step(&eval.grad, cfg)?;
    }
    Ok(TuneOutcome {
        features: FeatureMatrix::new(state.params)?,
        trace,
    })
}

/// Frozen linear map from prompt space (P) to feature space (D).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    weight: Array2<f64>,
}

impl ToyEncoder {
    /// Standard normal entries scaled by `1/sqrt(P)`.
    pub fn random(prompt_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (prompt_dim as f64).sqrt();
        let weight = Array2::from_shape_fn((prompt_dim, dim), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Self { weight }
    }

    pub fn from_weight(weight: Array2<f64>) -> Result<Self> {
        if let Some(((row, col), _)) = weight.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Self { weight })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
        }
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn prompt_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn encode(&self, prompts: &Array2<f64>) -> Result<FeatureMatrix> {
        if prompts.ncols() != self.weight.nrows() {
            return Err(Error::ShapeMismatch {
                expected: (prompts.nrows(), self.weight.nrows()),
                actual: prompts.dim(),
            });
        }
        FeatureMatrix::new(prompts.dot(&self.weight))
    }
}

/// Seeded standard-normal prompts scaled by `1/sqrt(P)`.
pub fn random_prompts(n: usize, prompt_dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (prompt_dim as f64).sqrt();
    Array2::from_shape_fn((n, prompt_dim), |_| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * scale
    })
}

#[derive(Debug, Clone)]
pub struct PromptTuneOutcome {
    pub prompts: Array2<f64>,
    pub features: FeatureMatrix,
    pub trace: Vec<TraceRow>,
}

/// Minimizes the combined loss over prompt parameters; the feature
/// gradient is chained through the encoder as `dL/dE . W^T`.
pub fn tune_prompts(
    encoder: &ToyEncoder,
    initial_prompts: &Array2<f64>,
    source: &dyn ProbabilitySource,
    cfg: &OptimizerConfig,
    loss_cfg: &CombinedLossConfig,
) -> Result<PromptTuneOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut state = OptimizerState::new(initial_prompts.clone(), ParamKind::Prompts);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let features = encoder.encode(&state.params)?;
        // surface degenerate rows before the loss does
        normalize(&features)?;
        let eval = combined_loss(&features, source, loss_cfg)?;
        trace.push(TraceRow {
            step,
            total_loss: eval.value,
            tpt_term: eval.tpt_term,
            reg_term: eval.reg_term,
        });
        let grad = eval.grad.dot(&encoder.weight.t());
        state.adamw_step(&grad, cfg)?;
    }
    let features = encoder.encode(&state.params)?;
    Ok(PromptTuneOutcome {
        prompts: state.params,
        features,
        trace,
    })
}

/// Best-packing search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TammesConfig {
    pub restarts: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TammesConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            steps: 2000,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TammesRun {
    pub seed: u64,
    pub min_angle: f64,
    pub features: FeatureMatrix,
}

#[derive(Debug, Clone)]
pub struct TammesSolution {
    pub features: FeatureMatrix,
    pub min_angle: f64,
    pub runs: Vec<TammesRun>,
}

/// Maximizes angular diversity alone from one random start and keeps the
/// iterate with the largest minimum pairwise angle.
pub fn packing_run(n: usize, d: usize, steps: usize, learning_rate: f64, seed: u64) -> Result<TammesRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = normalize(&FeatureMatrix::random_normal(n, d, &mut rng)?)?.to_features();
    let cfg = OptimizerConfig {
        learning_rate,
        steps,
        seed,
        ..Default::default()
    };
    cfg.validate()?;
    let mut state = OptimizerState::new(start.into_inner(), ParamKind::Features);
    let mut best = FeatureMatrix::new(state.params.clone())?;
    let mut best_angle = min_pairwise_angle(&best)?;
    for _ in 0..steps {
        let features = FeatureMatrix::new(state.params.clone())?;
        let eval = crate::objectives::regularizer_loss(Regularizer::AngularDiversity, &features, MinMode::Hard)?;
        state.adamw_step(&eval.grad, &cfg)?;
        let next = FeatureMatrix::new(state.params.clone())?;
        let angle = min_pairwise_angle(&next)?;
        if angle > best_angle {
            best_angle = angle;
            best = next;
        }
    }
    Ok(TammesRun {
        seed,
        min_angle: best_angle,
        features: best,
    })
}

/// Multi-start best-packing of `n` points on the sphere in `d` dimensions.
/// Restart `k` uses seed `cfg.seed + k`.
pub fn solve_tammes(n: usize, d: usize, cfg: &TammesConfig) -> Result<TammesSolution> {
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    if d < 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be >= 1".into()));
    }
    let runs = (0..cfg.restarts as u64)
        .map(|k| packing_run(n, d, cfg.steps, cfg.learning_rate, cfg.seed + k))
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .fold(&runs[0], |acc, r| if r.min_angle > acc.min_angle { r } else { acc });
    Ok(TammesSolution {
        features: best.features.clone(),
        min_angle: best.min_angle,
        runs,
    })
}
