//! Pointwise and normalization primitives shared by the forward and backward
//! passes.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Logistic sigmoid, evaluated so that neither branch overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Layer normalization without gain or bias.
///
/// Returns the normalized vector together with the mean and the biased
/// variance of the input.
pub fn layer_norm(v: &[f64], eps: f64) -> Result<(Vec<f64>, f64, f64)> {
    if v.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "layer_norm needs at least 2 entries, got {}",
            v.len()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(
            "layer_norm eps must be positive".into(),
        ));
    }
    let mut out = vec![0.0; v.len()];
    let (mean, var) = layer_norm_into(v, eps, &mut out);
    Ok((out, mean, var))
}

/// Unchecked core of [`layer_norm`], writing into `out`.
#[inline]
pub(crate) fn layer_norm_into(v: &[f64], eps: f64, out: &mut [f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - mean) * inv;
    }
    (mean, var)
}

/// Backward of gain-free layer norm for one vector.
///
/// `y` is the normalized output, `inv_std` is `1 / sqrt(var + eps)`, `dy` the
/// upstream gradient. Writes the input gradient into `dx`.
#[inline]
pub(crate) fn layer_norm_backward_into(y: &[f64], inv_std: f64, dy: &[f64], dx: &mut [f64]) {
    let n = y.len() as f64;
    let mean_dy = dy.iter().sum::<f64>() / n;
    let mean_dy_y = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
    for ((o, &g), &yy) in dx.iter_mut().zip(dy).zip(y) {
        *o = inv_std * (g - mean_dy - yy * mean_dy_y);
    }
}

/// Per-feature batch normalization state for one gate.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates. `var` is the
    /// biased batch variance over `count` rows; the running estimate uses the
    /// unbiased correction.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], count: usize) {
        let correction = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * mean[j];
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * var[j] * correction;
        }
    }
}

/// Everything the backward pass needs from one batch-norm application.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    /// Normalized input before gain and bias.
    pub xhat: Matrix,
    /// Statistics used for normalization (batch stats in training mode,
    /// running stats in eval mode).
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub training: bool,
}

/// Normalizes `x` per column, without touching `state`.
pub(crate) fn batch_norm_apply(
    x: &Matrix,
    state: &BatchNormState,
    training: bool,
    out: &mut Matrix,
) -> Result<BatchNormCache> {
    let (n, f) = x.shape();
    if f != state.features() {
        return Err(Error::shape(
            "batch_norm_forward",
            format!("{f} features for a {}-feature state", state.features()),
        ));
    }
    if training && n < 2 {
        return Err(Error::InvalidArgument(format!(
            "batch norm in training mode needs at least 2 rows, got {n}"
        )));
    }
    let (mean, var) = if training {
        let mut mean = vec![0.0; f];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; f];
        for i in 0..n {
            for ((s, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + state.eps).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, f);
    for i in 0..n {
        let src = x.row(i);
        let dst = xhat.row_mut(i);
        for j in 0..f {
            dst[j] = (src[j] - mean[j]) * inv_std[j];
        }
    }
    for i in 0..n {
        let src = xhat.row(i);
        let dst = out.row_mut(i);
        for j in 0..f {
            dst[j] = state.gamma[j] * src[j] + state.beta[j];
        }
    }
    Ok(BatchNormCache {
        xhat,
        mean,
        var,
        inv_std,
        training,
    })
}

/// Batch normalization over the rows of `x` (the flattened batch-time axis).
///
/// In training mode the batch statistics normalize the input and are folded
/// into the running estimates; in eval mode the running estimates are used.
pub fn batch_norm_forward(
    x: &Matrix,
    state: &mut BatchNormState,
    training: bool,
) -> Result<Matrix> {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let cache = batch_norm_apply(x, state, training, &mut out)?;
    if training {
        state.update_running(&cache.mean, &cache.var, x.rows());
    }
    Ok(out)
}

/// Gradients of batch norm. Writes the input gradient into `dx` and
/// accumulates into `dgamma`, `dbeta`.
pub(crate) fn batch_norm_backward(
    cache: &BatchNormCache,
    gamma: &[f64],
    dy: &Matrix,
    dx: &mut Matrix,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) {
    let (n, f) = dy.shape();
    let mut sum_dxhat = vec![0.0; f];
    let mut sum_dxhat_xhat = vec![0.0; f];
    for i in 0..n {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        for j in 0..f {
            dgamma[j] += g[j] * xh[j];
            dbeta[j] += g[j];
            let dxh = g[j] * gamma[j];
            sum_dxhat[j] += dxh;
            sum_dxhat_xhat[j] += dxh * xh[j];
        }
    }
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let g = dy.row(i);
        let xh = cache.xhat.row(i);
        let out = dx.row_mut(i);
        for j in 0..f {
            let dxh = g[j] * gamma[j];
            out[j] = if cache.training {
                cache.inv_std[j] * (dxh - inv_n * sum_dxhat[j] - xh[j] * inv_n * sum_dxhat_xhat[j])
            } else {
                cache.inv_std[j] * dxh
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1000.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(-1000.0) < 1e-300);
        let mut rng = Rng::new(4);
        for _ in 0..1000 {
            let x = rng.uniform_in(-40.0, 40.0);
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let (y, mean, var) = layer_norm(&[1.0, -1.0], LN_EPS).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(var, 1.0);
        assert!((y[0] - 1.0).abs() < 1e-5 && (y[1] + 1.0).abs() < 1e-5);

        let (y, _, var) = layer_norm(&[2.5; 4], LN_EPS).unwrap();
        assert_eq!(var, 0.0);
        assert!(y.iter().all(|&v| v == 0.0));

        assert!(layer_norm(&[1.0], LN_EPS).is_err());
        assert!(layer_norm(&[], LN_EPS).is_err());
    }

    #[test]
    fn layer_norm_standardizes() {
        let mut rng = Rng::new(8);
        let v: Vec<f64> = (0..32).map(|_| rng.gaussian() * 10.0 + 1.0).collect();
        let (y, _, _) = layer_norm(&v, LN_EPS).unwrap();
        let mean = y.iter().sum::<f64>() / 32.0;
        let var = y.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn batch_norm_two_rows() {
        let x = Matrix::from_rows(&[[1.0], [-1.0]]);
        let mut st = BatchNormState::new(1);
        let y = batch_norm_forward(&x, &mut st, true).unwrap();
        assert!((y[(0, 0)] - 1.0).abs() < 1e-5);
        assert!((y[(1, 0)] + 1.0).abs() < 1e-5);
        // Running variance uses the unbiased estimate: 2.0 for these rows.
        assert!((st.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
        assert_eq!(st.running_mean[0], 0.0);
    }

    #[test]
    fn batch_norm_zero_gain() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [-3.0, 2.0], [0.5, 0.0]]);
        let mut st = BatchNormState::new(2);
        st.gamma = vec![0.0, 0.0];
        st.beta = vec![0.25, -1.0];
        let y = batch_norm_forward(&x, &mut st, true).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), &[0.25, -1.0]);
        }
    }

    #[test]
    fn batch_norm_standardizes_columns() {
        let mut rng = Rng::new(5);
        let x = Matrix::from_fn(64, 16, |_, j| {
            rng.gaussian() * 10.0 * (j as f64 + 1.0) + j as f64
        });
        let mut st = BatchNormState::new(16);
        let y = batch_norm_forward(&x, &mut st, true).unwrap();
        for j in 0..16 {
            let col: Vec<f64> = (0..64).map(|i| y[(i, j)]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-6, "column {j}: {var}");
        }
    }

    #[test]
    fn batch_norm_training_needs_two_rows() {
        let mut st = BatchNormState::new(3);
        assert!(batch_norm_forward(&Matrix::zeros(1, 3), &mut st, true).is_err());
        assert!(batch_norm_forward(&Matrix::zeros(1, 3), &mut st, false).is_ok());
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut st = BatchNormState::new(1);
        st.running_mean = vec![2.0];
        st.running_var = vec![4.0 - st.eps];
        let y = batch_norm_forward(&Matrix::from_rows(&[[6.0]]), &mut st, false).unwrap();
        assert!((y[(0, 0)] - 2.0).abs() < 1e-12);
    }
}
