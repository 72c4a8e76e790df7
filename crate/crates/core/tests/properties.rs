use std::f64::consts::PI;

use hyperspread::gradcheck::{nondifferentiable, random_safe_pair};
use hyperspread::objectives::*;
use hyperspread::optim::{solve_tammes, tune_features, OptimizerConfig, TammesConfig};
use hyperspread::sphere::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn features(n: usize, d: usize, seed: u64) -> FeatureMatrix {
    FeatureMatrix::random_normal(n, d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn sizes() -> impl Strategy<Value = (usize, usize, u64)> {
    (2usize..12, 2usize..10, any::<u64>())
}

const ALL_OBJECTIVES: [Regularizer; 3] = [
    Regularizer::AngularDiversity,
    Regularizer::Orthogonality,
    Regularizer::Atfd,
];

proptest! {
    #[test]
    fn cosine_matrix_is_symmetric_and_angles_in_range((n, d, seed) in sizes()) {
        let nf = normalize(&features(n, d, seed)).unwrap();
        let cos = cosine_matrix(&nf);
        let c = cos.data();
        prop_assert!(max_diff(c, &c.t().to_owned()) < 1e-12);
        let theta = angle_matrix(&cos);
        prop_assert!(theta.data().iter().all(|t| (0.0..=PI).contains(t)));
    }

    #[test]
    fn normalize_is_idempotent((n, d, seed) in sizes()) {
        let once = normalize(&features(n, d, seed)).unwrap().to_features();
        let twice = normalize(&once).unwrap().to_features();
        prop_assert!(max_diff(once.data(), twice.data()) <= 1e-12);
        prop_assert!(once.row_norms().iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn row_scaling_keeps_cosines((n, d, seed) in sizes(), scales in prop::collection::vec(1e-3f64..1e3, 12)) {
        let f = features(n, d, seed);
        let mut scaled = f.data().clone();
        for (mut row, s) in scaled.rows_mut().into_iter().zip(&scales) {
            row *= *s;
        }
        let a = cosine_matrix(&normalize(&f).unwrap());
        let b = cosine_matrix(&normalize(&FeatureMatrix::new(scaled).unwrap()).unwrap());
        prop_assert!(max_diff(a.data(), b.data()) < 1e-10);
    }

    #[test]
    fn objectives_are_permutation_invariant((n, d, seed) in sizes(), rot in 1usize..11) {
        let f = features(n, d, seed);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = FeatureMatrix::new(f.data().select(ndarray::Axis(0), &perm)).unwrap();
        for reg in ALL_OBJECTIVES {
            let a = regularizer_loss(reg, &f, MinMode::Hard).unwrap();
            let b = regularizer_loss(reg, &permuted, MinMode::Hard).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-10);
            let a_perm = a.grad.select(ndarray::Axis(0), &perm);
            prop_assert!(max_diff(&a_perm, &b.grad) < 1e-10, "{reg:?}");
        }
    }

    #[test]
    fn angular_diversity_ignores_global_scale((n, d, seed) in sizes(), s in 1e-2f64..1e2) {
        let f = features(n, d, seed);
        let scaled = FeatureMatrix::new(f.data() * s).unwrap();
        let a = angular_diversity(&f).unwrap();
        let b = angular_diversity(&scaled).unwrap();
        prop_assert!((a.value - b.value).abs() < 1e-9);
        prop_assert!((-PI..=0.0).contains(&a.value));
        let expected = &a.grad / s;
        let scale = a.grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / s;
        prop_assert!(max_diff(&expected, &b.grad) <= 1e-8 * scale.max(1e-12));
    }

    #[test]
    fn descent_direction_lowers_each_objective((n, d, seed) in sizes()) {
        let f = features(n, d, seed);
        for reg in ALL_OBJECTIVES {
            if nondifferentiable(reg, &f).unwrap().is_some() {
                continue;
            }
            let eval = regularizer_loss(reg, &f, MinMode::Hard).unwrap();
            let g2: f64 = eval.grad.iter().map(|g| g * g).sum();
            // directional derivative along -grad estimated by a central difference
            let h = 1e-6 / g2.sqrt().max(1e-300);
            let plus = FeatureMatrix::new(f.data() - &(&eval.grad * h)).unwrap();
            let minus = FeatureMatrix::new(f.data() + &(&eval.grad * h)).unwrap();
            let dd = (regularizer_value(reg, &plus, MinMode::Hard).unwrap()
                - regularizer_value(reg, &minus, MinMode::Hard).unwrap()) / (2.0 * h);
            prop_assert!(dd <= 1e-9 * g2.max(1.0), "{reg:?} directional derivative {dd}");
        }
    }

    #[test]
    fn orthonormal_rows_zero_orthogonality_loss(n in 2usize..8, extra in 0usize..4) {
        let d = n + extra;
        let mut data = Array2::zeros((n, d));
        for i in 0..n {
            data[[i, i]] = 1.0 + i as f64;
        }
        let f = FeatureMatrix::new(data).unwrap();
        let eval = orthogonality_loss(&f).unwrap();
        prop_assert_eq!(eval.value, 0.0);
        prop_assert!(eval.grad.iter().all(|g| *g == 0.0));
        // any non-orthogonal pair makes it positive
        let mut bent = f.data().clone();
        bent[[0, 1]] = 0.3;
        prop_assert!(orthogonality_loss(&FeatureMatrix::new(bent).unwrap()).unwrap().value > 0.0);
    }

    #[test]
    fn safe_pairs_stay_off_the_clamp_band(d in 2usize..32, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, theta) = random_safe_pair(d, 1.0, &mut rng);
        prop_assert!(theta > 0.0 && theta < PI);
        let c = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
            / (a.iter().map(|x| x * x).sum::<f64>() * b.iter().map(|x| x * x).sum::<f64>()).sqrt();
        prop_assert!(c.abs() < 1.0 - 1e-6);
    }
}

#[test]
fn tuning_is_bit_reproducible_and_keeps_unit_rows() {
    let init = normalize(&features(6, 5, 3)).unwrap().to_features();
    let probs = FixedProbabilities(Array2::from_elem((1, 6), 1.0 / 6.0));
    let cfg = OptimizerConfig {
        steps: 7,
        ..Default::default()
    };
    let loss = CombinedLossConfig::default();
    let a = tune_features(&init, &probs, &cfg, &loss).unwrap();
    let b = tune_features(&init, &probs, &cfg, &loss).unwrap();
    assert_eq!(a.features, b.features);
    assert_eq!(a.trace, b.trace);
    assert!(a.features.row_norms().iter().all(|r| (r - 1.0).abs() < 1e-10));
}

#[test]
fn more_restarts_never_hurt_the_best_packing() {
    let mut last = 0.0;
    for restarts in 1..=4 {
        let cfg = TammesConfig {
            restarts,
            steps: 300,
            ..Default::default()
        };
        let sol = solve_tammes(7, 3, &cfg).unwrap();
        assert!(sol.min_angle >= last);
        last = sol.min_angle;
    }
}
