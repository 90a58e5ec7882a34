//! Manual backpropagation through time for every cell variant.

use crate::cells::{batch_norm_backward, layer_norm_backward_into, CellParams, ForwardTrace};
use crate::error::{Error, Result, Stage};
use crate::linalg::{gemm, l2_norm, Matrix, Op};
use crate::tensors::Tensors;

/// Loss gradients with respect to every entry of [`CellParams`], plus the
/// per-step state gradient norms used by the diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub wz: Matrix,
    pub wh: Matrix,
    pub uz: Matrix,
    pub uh: Matrix,
    pub bn_z_gamma: Vec<f64>,
    pub bn_z_beta: Vec<f64>,
    pub bn_h_gamma: Vec<f64>,
    pub bn_h_beta: Vec<f64>,
    /// `|dE/dh_t|` (Frobenius over the batch) for t = 0..T.
    pub state_norms: Vec<f64>,
    /// dE/dh_{-1}.
    pub h0: Matrix,
}

impl Gradients {
    pub fn zeros_like(params: &CellParams, steps: usize, batch: usize) -> Self {
        let h = params.hidden();
        Gradients {
            wz: Matrix::zeros(h, params.input()),
            wh: Matrix::zeros(h, params.input()),
            uz: Matrix::zeros(h, h),
            uh: Matrix::zeros(h, h),
            bn_z_gamma: vec![0.0; h],
            bn_z_beta: vec![0.0; h],
            bn_h_gamma: vec![0.0; h],
            bn_h_beta: vec![0.0; h],
            state_norms: vec![0.0; steps],
            h0: Matrix::zeros(batch, h),
        }
    }

    /// |dE/dh_{-1}| followed by the per-step norms: index `m + 1` holds
    /// `|dE/dh_m|`.
    pub fn state_norms_with_initial(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.state_norms.len() + 1);
        v.push(self.h0.frobenius_norm());
        v.extend_from_slice(&self.state_norms);
        v
    }
}

impl Tensors for Gradients {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.wz.as_slice(),
            self.wh.as_slice(),
            self.uz.as_slice(),
            self.uh.as_slice(),
            &self.bn_z_gamma,
            &self.bn_z_beta,
            &self.bn_h_gamma,
            &self.bn_h_beta,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wz.as_mut_slice(),
            self.wh.as_mut_slice(),
            self.uz.as_mut_slice(),
            self.uh.as_mut_slice(),
            &mut self.bn_z_gamma,
            &mut self.bn_z_beta,
            &mut self.bn_h_gamma,
            &mut self.bn_h_beta,
        ]
    }
}

/// Reverse-mode gradients through the recurrence.
///
/// `d_hidden` holds dE/dh_t for every step in [`crate::cells::Sequence`] row
/// order (`(T * batch) x hidden`); rows of steps with no direct loss are
/// zero. The parameters must be the ones the trace was recorded with.
///
/// Each step back combines three paths into dE/dh_{t-1}: the direct
/// `z_t * g` term, the path through the update gate and the path through the
/// candidate, the latter two via the (optionally layer-normalized) recurrent
/// products. Batch norm is differentiated through its batch statistics in
/// training mode.
pub fn bptt(params: &CellParams, trace: &ForwardTrace, d_hidden: &Matrix) -> Result<Gradients> {
    let (steps, batch, hidden) = (trace.steps, trace.batch, trace.hidden);
    if d_hidden.shape() != (steps * batch, hidden) {
        return Err(Error::shape(
            "bptt",
            format!(
                "upstream {:?} vs trace ({}, {hidden})",
                d_hidden.shape(),
                steps * batch
            ),
        ));
    }
    if params.hidden() != hidden || params.input() != trace.x.dim() {
        return Err(Error::shape("bptt", "parameters do not match the trace"));
    }
    let cfg = trace.cfg;
    let block = batch * hidden;
    let mut grads = Gradients::zeros_like(params, steps, batch);

    let mut g = vec![0.0; block];
    let mut g_next = vec![0.0; block];
    let mut d_rec_z = vec![0.0; block];
    let mut d_rec_h = vec![0.0; block];
    let mut scratch = vec![0.0; hidden];
    let mut d_ff_z = Matrix::zeros(steps * batch, hidden);
    let mut d_ff_h = Matrix::zeros(steps * batch, hidden);

    for t in (0..steps).rev() {
        for (gi, &d) in g.iter_mut().zip(trace.block(d_hidden, t)) {
            *gi += d;
        }
        grads.state_norms[t] = l2_norm(&g);

        let h_prev = trace.h_prev(t);
        let z = trace.block(&trace.z, t);
        let cand = trace.block(&trace.cand, t);
        let ff_h = trace.block(&trace.ff_h, t);
        let rec_h = trace.block(&trace.rec_h, t);
        {
            let dz_out = d_ff_z.row_block_mut(t * batch, batch);
            for k in 0..block {
                let zt = z[k];
                let dz = g[k] * (h_prev[k] - cand[k]);
                let dc = g[k] * (1.0 - zt);
                let daz = dz * zt * (1.0 - zt);
                let dah = dc * cfg.activate_grad(ff_h[k] + rec_h[k]);
                dz_out[k] = daz;
                d_rec_z[k] = daz;
                d_rec_h[k] = dah;
                g_next[k] = g[k] * zt;
            }
        }
        d_ff_h
            .row_block_mut(t * batch, batch)
            .copy_from_slice(&d_rec_h);

        if let (Some(ln_z), Some(ln_h)) = (&trace.ln_z, &trace.ln_h) {
            let rec_z = trace.block(&trace.rec_z, t);
            for b in 0..batch {
                let row = t * batch + b;
                let span = b * hidden..(b + 1) * hidden;
                scratch.copy_from_slice(&d_rec_z[span.clone()]);
                layer_norm_backward_into(
                    &rec_z[span.clone()],
                    ln_z.inv_std(row),
                    &scratch,
                    &mut d_rec_z[span.clone()],
                );
                scratch.copy_from_slice(&d_rec_h[span.clone()]);
                layer_norm_backward_into(
                    &rec_h[span.clone()],
                    ln_h.inv_std(row),
                    &scratch,
                    &mut d_rec_h[span],
                );
            }
        }

        // dU += d_recᵀ h_prev ; g_next += d_rec U
        let bh = (batch, hidden);
        let hh = (hidden, hidden);
        gemm(
            1.0,
            &d_rec_z,
            bh,
            Op::T,
            h_prev,
            bh,
            Op::N,
            1.0,
            grads.uz.as_mut_slice(),
        );
        gemm(
            1.0,
            &d_rec_h,
            bh,
            Op::T,
            h_prev,
            bh,
            Op::N,
            1.0,
            grads.uh.as_mut_slice(),
        );
        gemm(
            1.0,
            &d_rec_z,
            bh,
            Op::N,
            params.uz.as_slice(),
            hh,
            Op::N,
            1.0,
            &mut g_next,
        );
        gemm(
            1.0,
            &d_rec_h,
            bh,
            Op::N,
            params.uh.as_slice(),
            hh,
            Op::N,
            1.0,
            &mut g_next,
        );

        if !g_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Explosion {
                stage: Stage::Backward,
                timestep: Some(t),
            });
        }
        std::mem::swap(&mut g, &mut g_next);
    }
    grads.h0.as_mut_slice().copy_from_slice(&g);

    let d_proj_z = feedforward_backward(
        &trace.bn_z,
        &params.bn_z.gamma,
        d_ff_z,
        &mut grads.bn_z_gamma,
        &mut grads.bn_z_beta,
    );
    let d_proj_h = feedforward_backward(
        &trace.bn_h,
        &params.bn_h.gamma,
        d_ff_h,
        &mut grads.bn_h_gamma,
        &mut grads.bn_h_beta,
    );
    // dW = d_projᵀ X
    let x = trace.x.data();
    let rows = steps * batch;
    gemm(
        1.0,
        d_proj_z.as_slice(),
        (rows, hidden),
        Op::T,
        x.as_slice(),
        x.shape(),
        Op::N,
        0.0,
        grads.wz.as_mut_slice(),
    );
    gemm(
        1.0,
        d_proj_h.as_slice(),
        (rows, hidden),
        Op::T,
        x.as_slice(),
        x.shape(),
        Op::N,
        0.0,
        grads.wh.as_mut_slice(),
    );

    if !grads.is_finite() {
        return Err(Error::Explosion {
            stage: Stage::Backward,
            timestep: None,
        });
    }
    Ok(grads)
}

fn feedforward_backward(
    cache: &Option<crate::cells::BatchNormCache>,
    gamma: &[f64],
    d_out: Matrix,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    match cache {
        None => d_out,
        Some(c) => {
            let mut dx = Matrix::zeros(d_out.rows(), d_out.cols());
            batch_norm_backward(c, gamma, &d_out, &mut dx, dgamma, dbeta);
            dx
        }
    }
}

/// Rescales `grads` so their global L2 norm is at most `threshold`.
/// Returns the factor applied (1 when no clipping was needed).
pub fn clip_global_norm<T: Tensors + ?Sized>(grads: &mut T, threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be positive, got {threshold}"
        )));
    }
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::Explosion {
            stage: Stage::Clip,
            timestep: None,
        });
    }
    if norm <= threshold {
        return Ok(1.0);
    }
    let scale = threshold / norm;
    grads.scale(scale);
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::{cell_forward, FeedforwardNorm, Sequence, VariantConfig};
    use crate::linalg::Rng;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(1);
        let params = CellParams::init(3, 4, &mut rng).unwrap();
        let x = Sequence::new(5, 2, Matrix::from_fn(10, 3, |_, _| rng.gaussian())).unwrap();
        for cfg in VariantConfig::all(FeedforwardNorm::BatchNorm) {
            let tr = cell_forward(&params, &cfg, &x, None, true).unwrap();
            let g = bptt(&params, &tr, &Matrix::zeros(10, 4)).unwrap();
            assert_eq!(g.global_norm(), 0.0);
            assert!(g.state_norms.iter().all(|&n| n == 0.0));
        }
    }

    #[test]
    fn zero_weights_one_step_halves_gradient() {
        let params = CellParams::zeros(2, 3);
        let cfg = VariantConfig::LIGRU.with_feedforward_norm(FeedforwardNorm::None);
        let x = Sequence::new(1, 2, Matrix::from_rows(&[[0.3, -0.2], [1.0, 0.5]])).unwrap();
        let tr = cell_forward(&params, &cfg, &x, None, true).unwrap();
        let up = Matrix::from_rows(&[[1.0, -2.0, 0.5], [3.0, 0.0, 1.0]]);
        let g = bptt(&params, &tr, &up).unwrap();
        assert!((g.state_norms[0] - up.frobenius_norm()).abs() < 1e-15);
        assert!((g.h0.frobenius_norm() - 0.5 * up.frobenius_norm()).abs() < 1e-15);
    }

    #[test]
    fn clip_cases() {
        let params = CellParams::zeros(1, 1);
        let mut g = Gradients::zeros_like(&params, 1, 1);
        g.uz[(0, 0)] = 2.0;
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g.uz[(0, 0)], 1.0);

        let mut g = Gradients::zeros_like(&params, 1, 1);
        g.wh[(0, 0)] = 0.3;
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 1.0);
        assert_eq!(g.wh[(0, 0)], 0.3);

        assert!(clip_global_norm(&mut g, 0.0).is_err());
        g.wh[(0, 0)] = f64::NAN;
        assert!(clip_global_norm(&mut g, 1.0).unwrap_err().is_explosion());
    }

    #[test]
    fn upstream_shape_checked() {
        let mut rng = Rng::new(1);
        let params = CellParams::init(3, 4, &mut rng).unwrap();
        let x = Sequence::zeros(2, 2, 3);
        let tr = cell_forward(&params, &VariantConfig::LIGRU, &x, None, true).unwrap();
        assert!(bptt(&params, &tr, &Matrix::zeros(3, 4)).is_err());
    }
}
