//! Browser bindings. Every export returns a JSON string; errors surface as
//! JavaScript exceptions.

use hyperspread::gradcheck::gradnorm_curve;
use hyperspread::optim::{solve_tammes, OptimizerConfig, TammesConfig};
use hyperspread::sim::{generate_world, run_episode, SimConfig};
use hyperspread::svg::reliability_svg;
use hyperspread::tammes::lookup;
use hyperspread::Regularizer;
use serde::Serialize;
use wasm_bindgen::prelude::*;

type Outcome = Result<String, String>;

fn to_json<T: Serialize>(value: &T) -> Outcome {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Packing {
    n: usize,
    d: usize,
    min_angle_degrees: f64,
    optimal_degrees: Option<f64>,
    points: Vec<Vec<f64>>,
}

pub fn packing_json(n: usize, d: usize, restarts: usize, steps: usize, seed: u64) -> Outcome {
    let cfg = TammesConfig {
        restarts,
        steps,
        seed,
        ..Default::default()
    };
    let sol = solve_tammes(n, d, &cfg).map_err(|e| e.to_string())?;
    to_json(&Packing {
        n,
        d,
        min_angle_degrees: sol.min_angle.to_degrees(),
        optimal_degrees: lookup(n, d).map(|c| c.optimal_min_angle.to_degrees()),
        points: sol.features.data().rows().into_iter().map(|r| r.to_vec()).collect(),
    })
}

#[derive(Serialize)]
struct CurvePoint {
    degrees: f64,
    cosine: f64,
    angular: f64,
}

/// Gradient norms of both pair kernels at `samples` angles spread over (0, 180) degrees.
pub fn gradnorm_json(samples: usize) -> Outcome {
    if samples < 2 {
        return Err("need at least 2 samples".into());
    }
    let angles: Vec<f64> = (0..samples)
        .map(|k| (1.0 + 178.0 * k as f64 / (samples - 1) as f64).to_radians())
        .collect();
    let curve = gradnorm_curve(&angles).map_err(|e| e.to_string())?;
    to_json(
        &curve
            .iter()
            .map(|p| CurvePoint {
                degrees: p.theta.to_degrees(),
                cosine: p.cosine_gradnorm,
                angular: p.angular_gradnorm,
            })
            .collect::<Vec<_>>(),
    )
}

#[derive(Serialize)]
struct Episode {
    accuracy: f64,
    ece: f64,
    sce: f64,
    mean_min_angle_degrees: f64,
    cosine_mean: f64,
    svg: String,
}

#[allow(clippy::too_many_arguments)]
pub fn episode_json(
    n_classes: usize,
    dim: usize,
    n_samples: usize,
    regularizer: &str,
    lambda: f64,
    steps: usize,
    seed: u64,
) -> Outcome {
    let regularizer: Regularizer =
        serde_json::from_value(serde_json::Value::String(regularizer.to_string()))
            .map_err(|_| format!("unknown regularizer {regularizer:?}"))?;
    let cfg = SimConfig {
        n_classes,
        dim,
        n_samples,
        regularizer,
        lambda,
        master_seed: seed,
        ..Default::default()
    };
    let opt = OptimizerConfig {
        steps,
        ..Default::default()
    };
    let world = generate_world(&cfg).map_err(|e| e.to_string())?;
    let r = run_episode(&world, &cfg, &opt).map_err(|e| e.to_string())?;
    let title = format!("{} lambda {lambda}", regularizer.name());
    to_json(&Episode {
        accuracy: r.calibration.accuracy,
        ece: r.calibration.ece,
        sce: r.calibration.sce,
        mean_min_angle_degrees: r.mean_min_angle.to_degrees(),
        cosine_mean: r.cosine_mean,
        svg: reliability_svg(&r.calibration, &title),
    })
}

fn js(outcome: Outcome) -> Result<String, JsError> {
    outcome.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pack(n: usize, d: usize, restarts: usize, steps: usize, seed: u64) -> Result<String, JsError> {
    js(packing_json(n, d, restarts, steps, seed))
}

#[wasm_bindgen]
pub fn gradnorms(samples: usize) -> Result<String, JsError> {
    js(gradnorm_json(samples))
}

#[wasm_bindgen]
pub fn episode(
    n_classes: usize,
    dim: usize,
    n_samples: usize,
    regularizer: &str,
    lambda: f64,
    steps: usize,
    seed: u64,
) -> Result<String, JsError> {
    js(episode_json(n_classes, dim, n_samples, regularizer, lambda, steps, seed))
}
