//! Central finite-difference check of [`crate::backprop::bptt`].

use crate::backprop::bptt;
use crate::cells::{cell_forward, CellParams, Sequence, VariantConfig};
use crate::error::Result;
use crate::linalg::{Matrix, Rng};
use crate::tensors::Tensors;

pub const FD_STEP: f64 = 1e-5;

/// Denominators of the relative error are floored at this value so entries
/// whose true gradient is zero compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-7;

const NAMES: [&str; 8] = [
    "wz",
    "wh",
    "uz",
    "uh",
    "bn_z.gamma",
    "bn_z.beta",
    "bn_h.gamma",
    "bn_h.beta",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub variant: VariantConfig,
    pub hidden: usize,
    pub steps: usize,
    pub batch: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: (&'static str, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares manual gradients of `L = sum(C ⊙ H)` (a random linear functional
/// of every hidden state) against central differences for every parameter,
/// batch-norm gain and shift included.
pub fn check(
    cfg: &VariantConfig,
    hidden: usize,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<GradCheck> {
    let mut rng = Rng::new(seed);
    let input = 3;
    let params = CellParams::init(input, hidden, &mut rng)?;
    let x = Sequence::new(
        steps,
        batch,
        Matrix::from_fn(steps * batch, input, |_, _| rng.gaussian()),
    )?;
    let h0 = Matrix::from_fn(batch, hidden, |_, _| 0.5 * rng.gaussian());
    let coeff = Matrix::from_fn(steps * batch, hidden, |_, _| rng.gaussian());

    let loss = |p: &CellParams| -> Result<f64> {
        let trace = cell_forward(p, cfg, &x, Some(&h0), true)?;
        Ok(crate::linalg::dot(trace.h.as_slice(), coeff.as_slice()))
    };

    let trace = cell_forward(&params, cfg, &x, Some(&h0), true)?;
    let grads = bptt(&params, &trace, &coeff)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut report = GradCheck {
        variant: *cfg,
        hidden,
        steps,
        batch,
        checked: 0,
        max_rel_error: 0.0,
        worst: (NAMES[0], 0),
    };
    let mut probe = params.clone();
    for (k, name) in NAMES.iter().enumerate() {
        for i in 0..analytic[k].len() {
            let orig = probe.tensors()[k][i];
            probe.tensors_mut()[k][i] = orig + FD_STEP;
            let plus = loss(&probe)?;
            probe.tensors_mut()[k][i] = orig - FD_STEP;
            let minus = loss(&probe)?;
            probe.tensors_mut()[k][i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let err = relative_error(analytic[k][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (name, i);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::FeedforwardNorm;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.0001) - 1e-4 / 1.0001).abs() < 1e-12);
        assert!((relative_error(0.0, 1e-9) - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn small_instances_pass() {
        for ff in [FeedforwardNorm::BatchNorm, FeedforwardNorm::None] {
            for cfg in VariantConfig::all(ff) {
                let r = check(&cfg, 4, 3, 2, 11).unwrap();
                assert!(r.max_rel_error < 1e-4, "{} {:?}", cfg.label(), r);
                assert_eq!(r.checked, 2 * 12 + 2 * 16 + 4 * 4);
            }
        }
    }
}
