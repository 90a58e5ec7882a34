//! Gradient-transport bound η and the other per-epoch stability numbers.
//!
//! For the standard Li-GRU the norm of the state gradient can grow by at most
//! `η = γ₁/4 |Uz|₂ + |Uh|₂` per step back in time, where γ₁ is the largest
//! absolute hidden activation. The sine and layer-norm variants change the
//! candidate and normalization terms of that bound.

use serde::Serialize;

use crate::cells::{Activation, ForwardTrace, VariantConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, spectral_norm_from, Matrix, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Loss values above this count as an explosion even when finite.
pub const LOSS_LIMIT: f64 = 1e6;

/// Ratios are skipped where the later gradient norm is below this.
pub const RATIO_FLOOR: f64 = 1e-30;

/// Largest |h| over every step of the trace, h_{-1} included.
pub fn gamma1(trace: &ForwardTrace) -> f64 {
    trace.h0.max_abs().max(trace.h.max_abs())
}

/// `γ₁/4 |Uz|₂ + |Uh|₂`.
pub fn eta_standard(gamma1: f64, norm_uz: f64, norm_uh: f64) -> f64 {
    gamma1 / 4.0 * norm_uz + norm_uh
}

/// `γ₁/4 |Uz|₂ + cos(|Uh|₂)`, implemented as written for the sine candidate.
pub fn eta_sine(gamma1: f64, norm_uz: f64, norm_uh: f64) -> f64 {
    gamma1 / 4.0 * norm_uz + norm_uh.cos()
}

/// `γ₁/(4 σz) |Uz|₂ + |Uh|₂ / σh` for the layer-normalized recurrence.
pub fn eta_layernorm(
    gamma1: f64,
    norm_uz: f64,
    norm_uh: f64,
    sigma_z: f64,
    sigma_h: f64,
) -> Result<f64> {
    if !(sigma_z > 0.0) || !(sigma_h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "layer-norm sigmas must be positive, got {sigma_z} and {sigma_h}"
        )));
    }
    Ok(gamma1 / (4.0 * sigma_z) * norm_uz + norm_uh / sigma_h)
}

/// The η formula that applies to `cfg`. Layer norm takes precedence over the
/// activation, since both candidate nonlinearities have slope at most 1.
pub fn eta_for(
    cfg: &VariantConfig,
    gamma1: f64,
    norm_uz: f64,
    norm_uh: f64,
    sigmas: Option<(f64, f64)>,
) -> Result<f64> {
    if cfg.uses_layer_norm() {
        let (sz, sh) = sigmas
            .ok_or_else(|| Error::InvalidArgument("layer-norm variant needs sigmas".into()))?;
        return eta_layernorm(gamma1, norm_uz, norm_uh, sz, sh);
    }
    Ok(match cfg.activation {
        Activation::Relu => eta_standard(gamma1, norm_uz, norm_uh),
        Activation::Sine => eta_sine(gamma1, norm_uz, norm_uh),
    })
}

/// Mean over batch and time of `sqrt(var + eps)` of each gate's recurrent
/// term, i.e. the divisor the layer norm applied. `None` without layer norm.
pub fn gate_sigmas(trace: &ForwardTrace) -> Option<(f64, f64)> {
    let (ln_z, ln_h) = (trace.ln_z.as_ref()?, trace.ln_h.as_ref()?);
    let mean_std = |v: &[f64]| v.iter().map(|x| (x + LN_EPS).sqrt()).sum::<f64>() / v.len() as f64;
    Some((mean_std(&ln_z.var), mean_std(&ln_h.var)))
}

/// Largest `g[m-1] / g[m]` over adjacent entries, skipping near-zero
/// denominators. Index order is forward time: `g[m]` is |dE/dh_m|.
pub fn empirical_ratios(state_grad_norms: &[f64]) -> f64 {
    state_grad_norms
        .windows(2)
        .filter(|w| w[1] >= RATIO_FLOOR)
        .map(|w| w[0] / w[1])
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    Hidden,
    Loss,
    Gradient,
}

/// One batch of values produced at some point of training.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub epoch: usize,
    pub timestep: Option<usize>,
    pub kind: ObservationKind,
    pub values: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExplosionPoint {
    pub epoch: usize,
    pub timestep: Option<usize>,
}

/// First observation holding a NaN or infinity, or a loss above
/// [`LOSS_LIMIT`].
pub fn detect_explosion<'a>(
    stream: impl IntoIterator<Item = Observation<'a>>,
) -> Option<ExplosionPoint> {
    stream.into_iter().find_map(|obs| {
        let bad = obs
            .values
            .iter()
            .any(|v| !v.is_finite() || (obs.kind == ObservationKind::Loss && *v > LOSS_LIMIT));
        bad.then_some(ExplosionPoint {
            epoch: obs.epoch,
            timestep: obs.timestep,
        })
    })
}

/// Power-iteration spectral norms of the recurrent matrices, warm-started
/// from the previous call.
#[derive(Debug, Clone, Default)]
pub struct SpectralMonitor {
    uz: Option<Vec<f64>>,
    uh: Option<Vec<f64>>,
}

impl SpectralMonitor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn norms(&mut self, uz: &Matrix, uh: &Matrix) -> (f64, f64) {
        (Self::one(&mut self.uz, uz), Self::one(&mut self.uh, uh))
    }

    fn one(slot: &mut Option<Vec<f64>>, m: &Matrix) -> f64 {
        let est = match slot.as_deref() {
            Some(v) if v.len() == m.cols() => {
                spectral_norm_from(m, v, DEFAULT_TOL, DEFAULT_MAX_ITER)
            }
            _ => spectral_norm(m, DEFAULT_TOL, DEFAULT_MAX_ITER),
        };
        *slot = Some(est.vector);
        est.value
    }
}

/// Per-epoch stability numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub epoch: usize,
    #[serde(skip)]
    pub variant: VariantConfig,
    pub eta: f64,
    pub gamma1: f64,
    pub norm_uz: f64,
    pub norm_uh: f64,
    pub sigma_z: Option<f64>,
    pub sigma_h: Option<f64>,
    pub mse: f64,
    pub exploded_at: Option<ExplosionPoint>,
    pub max_adjacent_grad_ratio: f64,
}

impl StabilityReport {
    /// Builds a report from a trace and the weights it was produced with.
    pub fn from_trace(
        epoch: usize,
        trace: &ForwardTrace,
        uz: &Matrix,
        uh: &Matrix,
        monitor: &mut SpectralMonitor,
        mse: f64,
        state_grad_norms: &[f64],
    ) -> Result<Self> {
        let g1 = gamma1(trace);
        let (norm_uz, norm_uh) = monitor.norms(uz, uh);
        let sigmas = gate_sigmas(trace);
        let eta = eta_for(&trace.cfg, g1, norm_uz, norm_uh, sigmas)?;
        Ok(StabilityReport {
            epoch,
            variant: trace.cfg,
            eta,
            gamma1: g1,
            norm_uz,
            norm_uh,
            sigma_z: sigmas.map(|s| s.0),
            sigma_h: sigmas.map(|s| s.1),
            mse,
            exploded_at: None,
            max_adjacent_grad_ratio: empirical_ratios(state_grad_norms),
        })
    }

    /// η from the report's own fields.
    pub fn recompute_eta(&self) -> Result<f64> {
        let sigmas = self.sigma_z.zip(self.sigma_h);
        eta_for(
            &self.variant,
            self.gamma1,
            self.norm_uz,
            self.norm_uh,
            sigmas,
        )
    }
}
