//! Central-difference gradient checks and the pairwise gradient-norm laws of
//! the cosine and angle kernels.

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{regularizer_loss, regularizer_value, MinMode, Regularizer, TIE_TOLERANCE};
use crate::sphere::{angle_matrix, cosine_matrix, normalize, FeatureMatrix};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Pairs with `|cos| > 1 - CLAMP_BAND` are considered inside the clamp band
/// for checking purposes.
pub const CLAMP_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_entry: (usize, usize),
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub threshold: f64,
    pub abs_floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            threshold: 1e-4,
            abs_floor: 1e-7,
        }
    }
}

/// Scalar central difference.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central differences of `f` for every entry of the matrix.
pub fn finite_diff_gradient<F>(f: F, features: &FeatureMatrix, step: f64) -> Result<Array2<f64>>
where
    F: Fn(&FeatureMatrix) -> Result<f64>,
{
    if !(1e-8..=1e-2).contains(&step) {
        return Err(Error::InvalidConfig(format!("finite-difference step {step} outside [1e-8, 1e-2]")));
    }
    let base = features.data();
    let mut out = Array2::zeros(base.dim());
    let mut work = base.clone();
    for ((k, l), &x) in base.indexed_iter() {
        work[[k, l]] = x + step;
        let up = f(&FeatureMatrix::new(work.clone())?)?;
        work[[k, l]] = x - step;
        let down = f(&FeatureMatrix::new(work.clone())?)?;
        work[[k, l]] = x;
        out[[k, l]] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

/// Finite-difference gradient of one of the dispersion objectives.
pub fn objective_fd_gradient(
    regularizer: Regularizer,
    features: &FeatureMatrix,
    mode: MinMode,
    step: f64,
) -> Result<Array2<f64>> {
    finite_diff_gradient(|f| regularizer_value(regularizer, f, mode), features, step)
}

/// Entry-wise comparison. An entry agrees when its absolute error is within
/// `abs_floor + threshold * max(|analytic|, |numeric|)`. The reported relative
/// error covers only entries whose absolute error exceeds the floor.
pub fn compare(analytic: &Array2<f64>, numeric: &Array2<f64>, tol: Tolerance) -> GradCheckReport {
    assert_eq!(analytic.dim(), numeric.dim(), "gradient shapes differ");
    let mut max_rel = 0.0f64;
    let mut max_abs = 0.0f64;
    let mut worst = (0, 0);
    let mut passed = true;
    for ((idx, &a), &n) in analytic.indexed_iter().zip(numeric.iter()) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        max_abs = max_abs.max(abs);
        passed &= abs <= tol.abs_floor + tol.threshold * scale;
        if abs <= tol.abs_floor {
            continue;
        }
        let rel = abs / scale;
        if rel > max_rel {
            max_rel = rel;
            worst = idx;
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        worst_entry: worst,
        passed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    ClampBand,
    ArgminTie,
}

/// Why a matrix is a nondifferentiable point of `regularizer`, if it is one.
pub fn nondifferentiable(regularizer: Regularizer, features: &FeatureMatrix) -> Result<Option<SkipReason>> {
    if regularizer == Regularizer::None || regularizer == Regularizer::Atfd {
        return Ok(None);
    }
    let cos = cosine_matrix(&normalize(features)?);
    if cos.off_diagonal().iter().any(|c| c.abs() > 1.0 - CLAMP_BAND) {
        return Ok(Some(SkipReason::ClampBand));
    }
    if regularizer == Regularizer::AngularDiversity {
        let theta = angle_matrix(&cos);
        let th = theta.data();
        let n = th.nrows();
        for i in 0..n {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| th[[i, j]]).collect();
            row.sort_by(f64::total_cmp);
            if row.len() >= 2 && row[1] - row[0] <= TIE_TOLERANCE {
                return Ok(Some(SkipReason::ArgminTie));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckOutcome {
    Checked(GradCheckReport),
    Skipped(SkipReason),
}

/// Analytic vs finite-difference gradient for one objective at one point.
pub fn check_objective(
    regularizer: Regularizer,
    features: &FeatureMatrix,
    step: f64,
    tol: Tolerance,
) -> Result<CheckOutcome> {
    if let Some(reason) = nondifferentiable(regularizer, features)? {
        return Ok(CheckOutcome::Skipped(reason));
    }
    let analytic = regularizer_loss(regularizer, features, MinMode::Hard)?.grad;
    let numeric = objective_fd_gradient(regularizer, features, MinMode::Hard, step)?;
    Ok(CheckOutcome::Checked(compare(&analytic, &numeric, tol)))
}

/// Measured and predicted norm of one pairwise derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorm {
    pub measured: f64,
    pub predicted: f64,
}

struct PairKernel {
    cos: f64,
    theta: f64,
    norm_i: f64,
    /// d Cos_ij / d e_i through the library's cosine and normalization backward
    d_cos: Array1<f64>,
}

fn pair_kernel(e_i: &[f64], e_j: &[f64]) -> Result<PairKernel> {
    if e_i.len() != e_j.len() {
        return Err(Error::ShapeMismatch {
            expected: (2, e_i.len()),
            actual: (2, e_j.len()),
        });
    }
    let f = FeatureMatrix::from_rows(&[e_i.to_vec(), e_j.to_vec()])?;
    let nf = normalize(&f)?;
    let cos = cosine_matrix(&nf);
    let theta = angle_matrix(&cos).data()[[0, 1]];
    // unit upstream gradient on the single pair, without the clamp mask
    let d = e_i.len();
    let mut grad_hat = Array2::zeros((2, d));
    grad_hat.row_mut(0).assign(&nf.data().row(1));
    grad_hat.row_mut(1).assign(&nf.data().row(0));
    let back = nf.backward(&grad_hat);
    Ok(PairKernel {
        cos: cos.data()[[0, 1]],
        theta,
        norm_i: nf.norms()[0],
        d_cos: back.row(0).to_owned(),
    })
}

/// `|d Cos_ij / d e_i|` against `|sin theta_ij| / |e_i|`.
pub fn verify_cosine_gradnorm_law(e_i: &[f64], e_j: &[f64]) -> Result<GradNorm> {
    let k = pair_kernel(e_i, e_j)?;
    Ok(GradNorm {
        measured: k.d_cos.dot(&k.d_cos).sqrt(),
        predicted: k.theta.sin().abs() / k.norm_i,
    })
}

/// `|d theta_ij / d e_i|` against `1 / |e_i|`. Pairs inside the clamp band
/// are reported as an error rather than measured.
pub fn verify_angular_gradnorm_law(e_i: &[f64], e_j: &[f64]) -> Result<GradNorm> {
    let k = pair_kernel(e_i, e_j)?;
    if k.cos.abs() > 1.0 - CLAMP_BAND {
        return Err(Error::ClampBand(k.cos.abs()));
    }
    let d_theta = &k.d_cos * (-1.0 / (1.0 - k.cos * k.cos).sqrt());
    Ok(GradNorm {
        measured: d_theta.dot(&d_theta).sqrt(),
        predicted: 1.0 / k.norm_i,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNormPoint {
    pub theta: f64,
    pub cosine_gradnorm: f64,
    pub angular_gradnorm: f64,
}

/// Gradient norms of the cosine and angle kernels for unit vectors at each angle.
pub fn gradnorm_curve(angles: &[f64]) -> Result<Vec<GradNormPoint>> {
    angles
        .iter()
        .map(|&theta| {
            let e_i = [1.0, 0.0];
            let e_j = [theta.cos(), theta.sin()];
            let cosine = verify_cosine_gradnorm_law(&e_i, &e_j)?;
            let angular = verify_angular_gradnorm_law(&e_i, &e_j)?;
            Ok(GradNormPoint {
                theta,
                cosine_gradnorm: cosine.measured,
                angular_gradnorm: angular.measured,
            })
        })
        .collect()
}

pub fn write_gradnorm_csv<W: Write>(points: &[GradNormPoint], mut w: W) -> Result<()> {
    writeln!(w, "theta_radians,cosine_gradnorm,angular_gradnorm")?;
    for p in points {
        writeln!(w, "{:.6},{:.6},{:.6}", p.theta, p.cosine_gradnorm, p.angular_gradnorm)?;
    }
    Ok(())
}

/// Random pair `(e_i, e_j)` in `dim` dimensions with `|e_i| = norm_i`, at
/// an angle drawn uniformly from the safe range away from the clamp band.
pub fn random_safe_pair<R: Rng + ?Sized>(dim: usize, norm_i: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>, f64) {
    assert!(dim >= 2);
    let margin = 1e-2;
    let theta = rng.random_range(margin..(std::f64::consts::PI - margin));
    // orthonormal u, w from Gram-Schmidt on two gaussian draws
    let u = random_unit(dim, rng);
    let mut w = random_unit(dim, rng);
    let proj: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
    for (wk, uk) in w.iter_mut().zip(&u) {
        *wk -= proj * uk;
    }
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter_mut().for_each(|x| *x /= wn);
    let norm_j = rng.random_range(0.1..10.0);
    let e_i = u.iter().map(|x| x * norm_i).collect();
    let e_j = u
        .iter()
        .zip(&w)
        .map(|(a, b)| norm_j * (theta.cos() * a + theta.sin() * b))
        .collect();
    (e_i, e_j, theta)
}

fn random_unit<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Configuration of the full gradient verification suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seeds: u64,
    pub ns: Vec<usize>,
    pub ds: Vec<usize>,
    pub step: f64,
    pub threshold: f64,
    pub abs_floor: f64,
    pub law_pairs: usize,
    pub law_tolerance: f64,
    pub cosine_law_tolerance: f64,
    pub curve_angles_deg: Vec<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seeds: 50,
            ns: vec![3, 8, 20],
            ds: vec![2, 16, 64],
            step: DEFAULT_STEP,
            threshold: 1e-4,
            abs_floor: 1e-7,
            law_pairs: 1000,
            law_tolerance: 1e-6,
            cosine_law_tolerance: 1e-8,
            curve_angles_deg: vec![5.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0, 120.0, 150.0, 175.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSummary {
    pub objective: Regularizer,
    pub checked: usize,
    pub skipped_clamp_band: usize,
    pub skipped_argmin_tie: usize,
    pub failures: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawSummary {
    pub pairs: usize,
    pub angular_max_rel_error: f64,
    /// Std of measured angular norms at unit `|e_i|` across random angles.
    pub angular_std_at_fixed_norm: f64,
    pub cosine_max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub objectives: Vec<ObjectiveSummary>,
    pub laws: LawSummary,
    pub curve: Vec<GradNormPoint>,
    pub passed: bool,
}

pub fn finite_difference_suite(cfg: &SuiteConfig) -> Result<Vec<ObjectiveSummary>> {
    let tol = Tolerance {
        threshold: cfg.threshold,
        abs_floor: cfg.abs_floor,
    };
    let objectives = [Regularizer::AngularDiversity, Regularizer::Orthogonality, Regularizer::Atfd];
    let mut out = Vec::new();
    for objective in objectives {
        let mut s = ObjectiveSummary {
            objective,
            checked: 0,
            skipped_clamp_band: 0,
            skipped_argmin_tie: 0,
            failures: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        };
        for seed in 0..cfg.seeds {
            for &n in &cfg.ns {
                for &d in &cfg.ds {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let f = FeatureMatrix::random_normal(n, d, &mut rng)?;
                    match check_objective(objective, &f, cfg.step, tol)? {
                        CheckOutcome::Checked(r) => {
                            s.checked += 1;
                            s.max_rel_error = s.max_rel_error.max(r.max_rel_error);
                            s.max_abs_error = s.max_abs_error.max(r.max_abs_error);
                            if !r.passed {
                                s.failures += 1;
                            }
                        }
                        CheckOutcome::Skipped(SkipReason::ClampBand) => s.skipped_clamp_band += 1,
                        CheckOutcome::Skipped(SkipReason::ArgminTie) => s.skipped_argmin_tie += 1,
                    }
                }
            }
        }
        out.push(s);
    }
    Ok(out)
}

pub fn gradnorm_law_suite(pairs: usize, seed: u64) -> Result<LawSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut angular_max_rel = 0.0f64;
    let mut cosine_max_rel = 0.0f64;
    let mut unit_norms = Vec::with_capacity(pairs);
    for k in 0..pairs {
        let dim = rng.random_range(2..=64);
        // every other pair at unit norm feeds the angle-independence statistic
        let norm_i = if k % 2 == 0 { 1.0 } else { rng.random_range(0.05..20.0) };
        let (e_i, e_j, _) = random_safe_pair(dim, norm_i, &mut rng);
        let ang = verify_angular_gradnorm_law(&e_i, &e_j)?;
        let cos = verify_cosine_gradnorm_law(&e_i, &e_j)?;
        angular_max_rel = angular_max_rel.max((ang.measured - ang.predicted).abs() / ang.predicted);
        cosine_max_rel = cosine_max_rel.max((cos.measured - cos.predicted).abs() / cos.predicted);
        if norm_i == 1.0 {
            unit_norms.push(ang.measured);
        }
    }
    let mean = unit_norms.iter().sum::<f64>() / unit_norms.len() as f64;
    let var = unit_norms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / unit_norms.len() as f64;
    Ok(LawSummary {
        pairs,
        angular_max_rel_error: angular_max_rel,
        angular_std_at_fixed_norm: var.sqrt(),
        cosine_max_rel_error: cosine_max_rel,
        passed: false,
    })
}

/// Runs every gate: finite differences for all objectives, both norm laws,
/// and the norm-vs-angle curve.
pub fn run_suite(cfg: &SuiteConfig, seed: u64) -> Result<SuiteReport> {
    let objectives = finite_difference_suite(cfg)?;
    let mut laws = gradnorm_law_suite(cfg.law_pairs, seed)?;
    laws.passed = laws.angular_max_rel_error <= cfg.law_tolerance
        && laws.angular_std_at_fixed_norm <= cfg.law_tolerance
        && laws.cosine_max_rel_error <= cfg.cosine_law_tolerance;
    let angles: Vec<f64> = cfg.curve_angles_deg.iter().map(|d| d.to_radians()).collect();
    let curve = gradnorm_curve(&angles)?;
    let curve_ok = curve.iter().all(|p| {
        (p.cosine_gradnorm - p.theta.sin()).abs() <= cfg.law_tolerance
            && (p.angular_gradnorm - 1.0).abs() <= cfg.law_tolerance
    });
    let passed = laws.passed && curve_ok && objectives.iter().all(|o| o.failures == 0 && o.checked > 0);
    Ok(SuiteReport {
        objectives,
        laws,
        curve,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn scalar_sanity() {
        let d = central_difference(|x| x * x, 3.0, 1e-5);
        assert_abs_diff_eq!(d, 6.0, epsilon = 1e-8);
    }

    #[test]
    fn rejects_step_out_of_range() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(finite_diff_gradient(|_| Ok(0.0), &f, 0.1).is_err());
        assert!(finite_diff_gradient(|_| Ok(0.0), &f, 1e-9).is_err());
    }

    #[test]
    fn ad_seed_zero_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let f = FeatureMatrix::random_normal(5, 4, &mut rng).unwrap();
        match check_objective(Regularizer::AngularDiversity, &f, DEFAULT_STEP, Tolerance::default()).unwrap() {
            CheckOutcome::Checked(r) => assert!(r.passed && r.max_rel_error <= 1e-4, "{r:?}"),
            CheckOutcome::Skipped(s) => panic!("unexpected skip {s:?}"),
        }
    }

    #[test]
    fn orthogonality_is_stationary_at_orthogonal_pair() {
        let f = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let fd = objective_fd_gradient(Regularizer::Orthogonality, &f, MinMode::Hard, DEFAULT_STEP).unwrap();
        assert!(fd.iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn compare_uses_abs_floor() {
        let a = ndarray::array![[1e-9, 1.0]];
        let n = ndarray::array![[2e-9, 1.0]];
        let r = compare(&a, &n, Tolerance::default());
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
        let r = compare(&ndarray::array![[0.0, 1.0]], &ndarray::array![[0.0, 1.001]], Tolerance::default());
        assert_eq!(r.worst_entry, (0, 1));
        assert!(!r.passed);
        let strict = Tolerance { threshold: 1e-12, abs_floor: 0.0 };
        assert!(!compare(&a, &n, strict).passed);
    }

    #[test]
    fn cosine_law_examples() {
        let g = verify_cosine_gradnorm_law(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(g.measured, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g.predicted, 1.0, epsilon = 1e-15);

        let scaled = verify_cosine_gradnorm_law(&[2.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(scaled.predicted, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(scaled.measured, 0.5, epsilon = 1e-15);

        let tiny: f64 = 1e-4;
        let near = verify_cosine_gradnorm_law(&[1.0, 0.0], &[tiny.cos(), tiny.sin()]).unwrap();
        assert!(near.measured < 5e-4);
    }

    #[test]
    fn angular_law_examples() {
        let g = verify_angular_gradnorm_law(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(g.measured, 1.0, epsilon = 1e-15);

        let a30 = verify_angular_gradnorm_law(&[1.0, 0.0], &[(PI / 6.0).cos(), (PI / 6.0).sin()]).unwrap();
        let a150 =
            verify_angular_gradnorm_law(&[1.0, 0.0], &[(5.0 * PI / 6.0).cos(), (5.0 * PI / 6.0).sin()]).unwrap();
        assert_abs_diff_eq!(a30.measured, 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(a150.measured, 1.0, epsilon = 1e-6);

        let four = verify_angular_gradnorm_law(&[0.0, 4.0, 0.0], &[1.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(four.predicted, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(four.measured, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn angular_law_reports_clamp_band() {
        let err = verify_angular_gradnorm_law(&[1.0, 0.0], &[1.0, 1e-5]).unwrap_err();
        assert!(matches!(err, Error::ClampBand(_)));
        assert!(matches!(
            verify_angular_gradnorm_law(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNormRow(0))
        ));
    }

    #[test]
    fn curve_examples() {
        let pts = gradnorm_curve(&[PI / 2.0, PI / 6.0, 3e-3]).unwrap();
        assert_abs_diff_eq!(pts[0].cosine_gradnorm, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[0].angular_gradnorm, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pts[1].cosine_gradnorm, 0.5, epsilon = 1e-12);
        assert!(pts[2].cosine_gradnorm < 5e-3);
        assert_abs_diff_eq!(pts[2].angular_gradnorm, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn curve_csv_has_six_decimals() {
        let pts = gradnorm_curve(&[PI / 2.0]).unwrap();
        let mut buf = Vec::new();
        write_gradnorm_csv(&pts, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "theta_radians,cosine_gradnorm,angular_gradnorm\n1.570796,1.000000,1.000000\n"
        );
    }
}
