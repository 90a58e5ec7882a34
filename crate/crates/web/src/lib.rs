//! Browser bindings for the `ligru` crate.
//!
//! Each exported function returns a JSON string so the page can stay plain
//! JavaScript. The `*_json` functions below do the work and are what the
//! native tests call; the `#[wasm_bindgen]` wrappers only convert errors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ligru::adding_task::generate;
use ligru::diagnostics::{eta_layernorm, eta_sine, eta_standard, SpectralMonitor, StabilityReport};
use ligru::linalg::Rng;
use ligru::model::Model;
use ligru::runner::{train, ExperimentConfig, VariantName, METRICS_HEADER};
use ligru::{Error, Result};

#[derive(Debug, Serialize)]
pub struct EtaCurves {
    pub gamma1: Vec<f64>,
    pub standard: Vec<f64>,
    pub sine: Vec<f64>,
    pub layernorm: Vec<f64>,
}

/// η of the three formulas on an even grid `0..=gamma_max` of γ₁.
pub fn eta_curves_json(
    norm_uz: f64,
    norm_uh: f64,
    sigma_z: f64,
    sigma_h: f64,
    gamma_max: f64,
    points: usize,
) -> Result<String> {
    if points < 2 || !(gamma_max > 0.0) {
        return Err(Error::InvalidArgument(
            "need points >= 2 and gamma_max > 0".into(),
        ));
    }
    let grid: Vec<f64> = (0..points)
        .map(|i| gamma_max * i as f64 / (points - 1) as f64)
        .collect();
    let layernorm = grid
        .iter()
        .map(|&g| eta_layernorm(g, norm_uz, norm_uh, sigma_z, sigma_h))
        .collect::<Result<Vec<_>>>()?;
    let curves = EtaCurves {
        standard: grid
            .iter()
            .map(|&g| eta_standard(g, norm_uz, norm_uh))
            .collect(),
        sine: grid
            .iter()
            .map(|&g| eta_sine(g, norm_uz, norm_uh))
            .collect(),
        layernorm,
        gamma1: grid,
    };
    to_json(&curves)
}

#[derive(Debug, Serialize)]
pub struct Simulation {
    pub variant: String,
    /// `max |h_t|` per step.
    pub state_max: Vec<f64>,
    /// `|dE/dh_t|` per step, h_{-1} first.
    pub grad_norms: Vec<f64>,
    pub report: StabilityReport,
}

/// One forward and backward pass on an adding-task batch after scaling both
/// recurrent matrices by `u_scale`.
pub fn simulate_json(
    variant: &str,
    steps: usize,
    hidden: usize,
    u_scale: f64,
    seed: u64,
) -> Result<String> {
    let name: VariantName = variant.parse()?;
    let cfg = name.cell();
    if steps < 2 || !steps.is_multiple_of(2) || hidden == 0 {
        return Err(Error::InvalidArgument(
            "steps must be even and >= 2, hidden >= 1".into(),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut model = Model::init(2, hidden, &mut rng)?;
    model.cell.uz = model.cell.uz.scale(u_scale);
    model.cell.uh = model.cell.uh.scale(u_scale);
    let batch = generate(steps, 16, &mut rng)?;
    let step = model.loss_and_grads(&cfg, &batch)?;
    let grad_norms = step.grads.cell.state_norms_with_initial();
    let tr = &step.trace;
    let state_max = (0..steps)
        .map(|t| {
            tr.block(&tr.h, t)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .collect();
    let mut monitor = SpectralMonitor::new();
    let report = StabilityReport::from_trace(
        0,
        tr,
        &model.cell.uz,
        &model.cell.uh,
        &mut monitor,
        step.mse,
        &grad_norms,
    )?;
    to_json(&Simulation {
        variant: name.as_str().to_string(),
        state_max,
        grad_norms,
        report,
    })
}

/// Trains a small model in memory and returns the metrics CSV.
pub fn train_csv(
    variant: &str,
    steps: usize,
    hidden: usize,
    batch: usize,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<String> {
    let name: VariantName = variant.parse()?;
    let cfg = ExperimentConfig {
        variant: name.cell(),
        stabilizers: name.stabilizers(),
        steps,
        hidden,
        batch,
        epochs,
        lr,
        seed,
        metrics_path: Default::default(),
    };
    let mut out = Vec::new();
    train(&cfg, &mut out, |_, _| true)?;
    String::from_utf8(out).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Column names of the CSV returned by [`train_adding`].
#[wasm_bindgen]
pub fn metrics_header() -> String {
    METRICS_HEADER.to_string()
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn eta_curves(
    norm_uz: f64,
    norm_uh: f64,
    sigma_z: f64,
    sigma_h: f64,
    gamma_max: f64,
    points: usize,
) -> std::result::Result<String, JsError> {
    eta_curves_json(norm_uz, norm_uh, sigma_z, sigma_h, gamma_max, points).map_err(js)
}

#[wasm_bindgen]
pub fn simulate(
    variant: &str,
    steps: usize,
    hidden: usize,
    u_scale: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    simulate_json(variant, steps, hidden, u_scale, seed.into()).map_err(js)
}

#[wasm_bindgen]
pub fn train_adding(
    variant: &str,
    steps: usize,
    hidden: usize,
    batch: usize,
    epochs: usize,
    lr: f64,
    seed: u32,
) -> std::result::Result<String, JsError> {
    train_csv(variant, steps, hidden, batch, epochs, lr, seed.into()).map_err(js)
}
