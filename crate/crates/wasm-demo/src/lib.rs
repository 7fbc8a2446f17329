//! Browser demo: power-mean curves, mixing of a random topology, and a
//! small decentralized training run. The plain functions return flat
//! `f64` arrays so the page can draw them without any glue types.

use wasm_bindgen::prelude::*;

use wpm_core::data::{partition, synthesize_blobs, PartitionMode};
use wpm_core::learners::{ConvexModelSpec, ModelKind};
use wpm_core::power::wpm_aggregate;
use wpm_core::simulator::{run_wpm, ExperimentConfig, Problem};
use wpm_core::topology::{
    generate_sequence, mixing_constants, verify_assumption1, weights_from_graph, WeightMatrix,
};

/// Weighted power mean of scalar `values` for `p = 1..=p_max`.
pub fn power_mean_curve(values: &[f64], weights: &[f64], p_max: u32) -> Result<Vec<f64>, String> {
    let models: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
    (1..=p_max)
        .map(|p| wpm_aggregate(&models, weights, p).map(|m| m.as_ref()[0]).map_err(|e| e.to_string()))
        .collect()
}

/// For the products `W(t)...W(0)` of a generated topology, returns
/// `[deviation_0, bound_0, deviation_1, bound_1, ...]` where deviation is the
/// largest entry distance from `1/m` and bound is the geometric envelope.
pub fn mixing_curve(
    devices: usize,
    density: f64,
    window: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let seq = generate_sequence(devices, density, iterations, window, seed).map_err(|e| e.to_string())?;
    let zeta = verify_assumption1(&seq).min_positive_entry;
    let (vartheta, kappa) = mixing_constants(zeta, devices, window);
    let mut product = WeightMatrix::identity(devices);
    let mut out = Vec::with_capacity(2 * iterations);
    for (t, g) in seq.snapshots().iter().enumerate() {
        product = weights_from_graph(g).matmul(&product);
        out.push(product.deviation_from_uniform());
        out.push(vartheta * kappa.powi(t as i32));
    }
    Ok(out)
}

/// Trains logistic regression on synthetic blobs over a random topology and
/// returns `[accuracy_0, consensus_0, accuracy_1, consensus_1, ...]`.
pub fn train_blobs(p: u32, devices: usize, iterations: usize, seed: u64) -> Result<Vec<f64>, String> {
    let all = synthesize_blobs(600, 5, 3, 0.15, seed).map_err(|e| e.to_string())?;
    let train = all.subset(&(0..500).collect::<Vec<_>>());
    let test = all.subset(&(500..600).collect::<Vec<_>>());
    let part = partition(&train, devices, PartitionMode::Iid, seed).map_err(|e| e.to_string())?;
    let spec = ConvexModelSpec::for_dataset(ModelKind::LogisticRegression, &train);
    let cfg = ExperimentConfig {
        p,
        eta0: 0.5,
        devices,
        // Enough edges for every snapshot to be connectable.
        density: (2.0 / devices as f64).max(0.4),
        iterations,
        batch_size: 16,
        seed,
        ..Default::default()
    };
    let topo = generate_sequence(devices, cfg.density, iterations, 1, seed).map_err(|e| e.to_string())?;
    let problem = Problem { spec, train: &train, test: &test, partition: &part };
    let out = run_wpm(&cfg, &topo, &problem).map_err(|e| e.to_string())?;
    Ok(out.trace.rows.iter().flat_map(|r| [r.mean_accuracy, r.consensus_distance]).collect())
}

#[wasm_bindgen(js_name = powerMeanCurve)]
pub fn power_mean_curve_js(values: Vec<f64>, weights: Vec<f64>, p_max: u32) -> Result<Vec<f64>, JsError> {
    power_mean_curve(&values, &weights, p_max).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mixingCurve)]
pub fn mixing_curve_js(
    devices: usize,
    density: f64,
    window: usize,
    iterations: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    mixing_curve(devices, density, window, iterations, seed.into()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = trainBlobs)]
pub fn train_blobs_js(p: u32, devices: usize, iterations: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    train_blobs(p, devices, iterations, seed.into()).map_err(|e| JsError::new(&e))
}
