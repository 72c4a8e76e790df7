use hyperspread::optim::OptimizerConfig;
use hyperspread::sim::*;
use hyperspread::Regularizer;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        n_classes: 6,
        dim: 12,
        n_samples: 20,
        master_seed: seed,
        ..Default::default()
    }
}

/// First seed whose two prototypes on the circle are within ~3 degrees of
/// orthogonal.
fn orthogonal_seed(cfg: &SimConfig) -> (u64, World) {
    (0..)
        .find_map(|seed| {
            let world = generate_world(&SimConfig { master_seed: seed, ..cfg.clone() }).unwrap();
            let p = world.prototypes.data();
            let c = p.row(0).dot(&p.row(1));
            (c.abs() < 0.05).then_some((seed, world))
        })
        .unwrap()
}

#[test]
fn orthogonal_two_class_baseline() {
    let cfg = SimConfig {
        n_classes: 2,
        dim: 2,
        n_samples: 400,
        noise_sigma: 0.3,
        text_bias: 0.0,
        ..Default::default()
    };
    let (seed, world) = orthogonal_seed(&cfg);
    let report = zero_shot_baseline(&world, &SimConfig { master_seed: seed, ..cfg }).unwrap();
    // Seed 73 gives 0.99 on first run. A sample is misread when its noise
    // along p0 - p1 exceeds half the prototype gap: Phi(-1 / (sqrt(2) * 0.3))
    // is about 0.009.
    assert_eq!(seed, 73);
    assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
    assert!((report.accuracy - 0.99).abs() <= 0.05, "accuracy {}", report.accuracy);
}

#[test]
fn dispersion_raises_min_angle_over_plain_tuning() {
    let cfg = small(4);
    let world = generate_world(&cfg).unwrap();
    let opt = OptimizerConfig::default();
    let with = run_episode(&world, &SimConfig { lambda: 80.0, ..cfg.clone() }, &opt).unwrap();
    let without = run_episode(&world, &SimConfig { lambda: 0.0, ..cfg.clone() }, &opt).unwrap();
    assert!(with.mean_min_angle > without.mean_min_angle);
    let none = run_episode(&world, &SimConfig { regularizer: Regularizer::None, ..cfg }, &opt).unwrap();
    assert_eq!(none.records, without.records);
}

#[test]
fn pareto_zero_row_matches_standalone_episode() {
    let cfg = small(9);
    let world = generate_world(&cfg).unwrap();
    let opt = OptimizerConfig::default();
    let rows = pareto_sweep(&[0.0, 10.0, 80.0], &world, &cfg, &opt).unwrap();
    assert_eq!(rows.len(), 3);
    let plain = run_episode(&world, &SimConfig { lambda: 0.0, ..cfg }, &opt).unwrap();
    assert_eq!(rows[0].accuracy, plain.calibration.accuracy);
    assert_eq!(rows[0].ece, plain.calibration.ece);
    assert_eq!(rows[0].mean_min_angle, plain.mean_min_angle);
}

#[test]
fn regime_table_has_a_row_per_regularizer() {
    let cfg = SimConfig {
        n_samples: 4,
        ..small(1)
    };
    let rows = regime_experiment(&[(8, 4), (3, 6)], &cfg, &OptimizerConfig::default()).unwrap();
    assert_eq!(rows.len(), 8);
    let mut csv = Vec::new();
    write_regime_csv(&rows, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
}

#[test]
fn episodes_are_deterministic() {
    let cfg = small(2);
    let opt = OptimizerConfig {
        steps: 3,
        ..Default::default()
    };
    let a = run_episode(&generate_world(&cfg).unwrap(), &cfg, &opt).unwrap();
    let b = run_episode(&generate_world(&cfg).unwrap(), &cfg, &opt).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = small(5);
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"noise_sigma\""));
    assert_eq!(serde_json::from_str::<SimConfig>(&text).unwrap(), cfg);
    let partial: SimConfig = serde_json::from_str(r#"{"n_classes": 3, "regularizer": "orthogonality"}"#).unwrap();
    assert_eq!(partial.n_classes, 3);
    assert_eq!(partial.regularizer, Regularizer::Orthogonality);
}
