//! The Li-GRU cell family.
//!
//! One cell covers the standard Li-GRU, the layer-normalized SLi-GRU and the
//! sine-candidate variant:
//!
//! ```text
//! z_t = sigmoid(BN(Wz x_t) + [LN](Uz h_{t-1}))
//! c_t = act(BN(Wh x_t) + [LN](Uh h_{t-1}))
//! h_t = z_t * h_{t-1} + (1 - z_t) * c_t
//! ```
//!
//! Feed-forward projections are computed and batch-normalized for the whole
//! sequence before the recurrence runs. There are no bias vectors; the batch
//! norm shift plays that role.

pub mod checkpoint;
mod norm;

use serde::{Deserialize, Serialize};

pub(crate) use norm::{
    batch_norm_apply, batch_norm_backward, layer_norm_backward_into, layer_norm_into,
};
pub use norm::{
    batch_norm_forward, layer_norm, sigmoid, BatchNormCache, BatchNormState, BN_EPS, BN_MOMENTUM,
    LN_EPS,
};

use crate::error::{Error, Result, Stage};
use crate::linalg::{matmul_nt, orthogonal_init, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentNorm {
    None,
    LayerNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardNorm {
    BatchNorm,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantConfig {
    pub activation: Activation,
    pub recurrent_norm: RecurrentNorm,
    pub feedforward_norm: FeedforwardNorm,
}

impl VariantConfig {
    pub const LIGRU: VariantConfig = VariantConfig {
        activation: Activation::Relu,
        recurrent_norm: RecurrentNorm::None,
        feedforward_norm: FeedforwardNorm::BatchNorm,
    };
    pub const SLIGRU: VariantConfig = VariantConfig {
        activation: Activation::Relu,
        recurrent_norm: RecurrentNorm::LayerNorm,
        feedforward_norm: FeedforwardNorm::BatchNorm,
    };
    pub const SINE: VariantConfig = VariantConfig {
        activation: Activation::Sine,
        recurrent_norm: RecurrentNorm::None,
        feedforward_norm: FeedforwardNorm::BatchNorm,
    };

    pub fn with_feedforward_norm(mut self, norm: FeedforwardNorm) -> Self {
        self.feedforward_norm = norm;
        self
    }

    /// All activation x recurrent-norm combinations for one feed-forward
    /// setting.
    pub fn all(feedforward_norm: FeedforwardNorm) -> [VariantConfig; 4] {
        let mut out = [VariantConfig::LIGRU; 4];
        let mut i = 0;
        for activation in [Activation::Relu, Activation::Sine] {
            for recurrent_norm in [RecurrentNorm::None, RecurrentNorm::LayerNorm] {
                out[i] = VariantConfig {
                    activation,
                    recurrent_norm,
                    feedforward_norm,
                };
                i += 1;
            }
        }
        out
    }

    pub fn uses_layer_norm(&self) -> bool {
        self.recurrent_norm == RecurrentNorm::LayerNorm
    }

    pub fn uses_batch_norm(&self) -> bool {
        self.feedforward_norm == FeedforwardNorm::BatchNorm
    }

    /// Short label, e.g. `relu-ln-bn`.
    pub fn label(&self) -> String {
        let act = match self.activation {
            Activation::Relu => "relu",
            Activation::Sine => "sine",
        };
        let rec = match self.recurrent_norm {
            RecurrentNorm::None => "none",
            RecurrentNorm::LayerNorm => "ln",
        };
        let ff = match self.feedforward_norm {
            FeedforwardNorm::BatchNorm => "bn",
            FeedforwardNorm::None => "none",
        };
        format!("{act}-{rec}-{ff}")
    }

    #[inline]
    pub(crate) fn activate(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => x.max(0.0),
            Activation::Sine => x.sin(),
        }
    }

    /// Derivative of the candidate activation at pre-activation `x`.
    #[inline]
    pub(crate) fn activate_grad(&self, x: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => x.cos(),
        }
    }
}

/// Learnable weights and normalization state of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    /// hidden x input
    pub wz: Matrix,
    pub wh: Matrix,
    /// hidden x hidden
    pub uz: Matrix,
    pub uh: Matrix,
    pub bn_z: BatchNormState,
    pub bn_h: BatchNormState,
}

impl CellParams {
    /// Glorot-uniform feed-forward weights, orthogonal recurrent weights.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidArgument(
                "cell dimensions must be nonzero".into(),
            ));
        }
        let limit = (6.0 / (input + hidden) as f64).sqrt();
        let wz = Matrix::from_fn(hidden, input, |_, _| rng.uniform_in(-limit, limit));
        let wh = Matrix::from_fn(hidden, input, |_, _| rng.uniform_in(-limit, limit));
        let uz = orthogonal_init(hidden, hidden, rng)?;
        let uh = orthogonal_init(hidden, hidden, rng)?;
        Ok(CellParams {
            wz,
            wh,
            uz,
            uh,
            bn_z: BatchNormState::new(hidden),
            bn_h: BatchNormState::new(hidden),
        })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        CellParams {
            wz: Matrix::zeros(hidden, input),
            wh: Matrix::zeros(hidden, input),
            uz: Matrix::zeros(hidden, hidden),
            uh: Matrix::zeros(hidden, hidden),
            bn_z: BatchNormState::new(hidden),
            bn_h: BatchNormState::new(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.uz.rows()
    }

    pub fn input(&self) -> usize {
        self.wz.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        let i = self.input();
        let ok = self.uz.shape() == (h, h)
            && self.uh.shape() == (h, h)
            && self.wz.shape() == (h, i)
            && self.wh.shape() == (h, i)
            && self.bn_z.features() == h
            && self.bn_h.features() == h;
        if ok {
            Ok(())
        } else {
            Err(Error::shape(
                "CellParams",
                format!(
                    "wz {:?} wh {:?} uz {:?} uh {:?} bn {} {}",
                    self.wz.shape(),
                    self.wh.shape(),
                    self.uz.shape(),
                    self.uh.shape(),
                    self.bn_z.features(),
                    self.bn_h.features()
                ),
            ))
        }
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running batch-norm estimates.
    pub fn absorb_batch_stats(&mut self, trace: &ForwardTrace) {
        let n = trace.steps * trace.batch;
        for (state, cache) in [(&mut self.bn_z, &trace.bn_z), (&mut self.bn_h, &trace.bn_h)] {
            if let Some(c) = cache {
                if c.training {
                    state.update_running(&c.mean, &c.var, n);
                }
            }
        }
    }
}

/// A batch of equal-length sequences, stored as one `(steps * batch) x dim`
/// matrix whose row `t * batch + b` is element `b` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    steps: usize,
    batch: usize,
    data: Matrix,
}

impl Sequence {
    pub fn new(steps: usize, batch: usize, data: Matrix) -> Result<Self> {
        if data.rows() != steps * batch {
            return Err(Error::shape(
                "Sequence::new",
                format!("{} rows for {steps} steps x {batch} batch", data.rows()),
            ));
        }
        Ok(Sequence { steps, batch, data })
    }

    pub fn zeros(steps: usize, batch: usize, dim: usize) -> Self {
        Sequence {
            steps,
            batch,
            data: Matrix::zeros(steps * batch, dim),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn data(&self) -> &Matrix {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Matrix {
        &mut self.data
    }

    /// `batch x dim` block at time `t`, row-major.
    pub fn step(&self, t: usize) -> &[f64] {
        self.data.row_block(t * self.batch, self.batch)
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        self.data.row_block_mut(t * self.batch, self.batch)
    }

    pub fn step_matrix(&self, t: usize) -> Matrix {
        Matrix::from_vec(self.batch, self.dim(), self.step(t).to_vec()).expect("block shape")
    }
}

/// Per-row statistics of the layer norm over the recurrent term of each gate.
#[derive(Debug, Clone)]
pub struct LayerNormStats {
    /// length `steps * batch`
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LayerNormStats {
    pub(crate) fn zeros(rows: usize) -> Self {
        LayerNormStats {
            mean: vec![0.0; rows],
            var: vec![0.0; rows],
        }
    }

    #[inline]
    pub fn inv_std(&self, row: usize) -> f64 {
        1.0 / (self.var[row] + LN_EPS).sqrt()
    }
}

/// Activations cached by the forward pass. Every matrix is
/// `(steps * batch) x hidden` in [`Sequence`] row order.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub cfg: VariantConfig,
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
    pub training: bool,
    /// Input sequence, kept for the feed-forward weight gradients.
    pub x: Sequence,
    /// Initial state h_{-1}, `batch x hidden`.
    pub h0: Matrix,
    /// Feed-forward projections after batch norm (or raw without it).
    pub ff_z: Matrix,
    pub ff_h: Matrix,
    pub bn_z: Option<BatchNormCache>,
    pub bn_h: Option<BatchNormCache>,
    /// Recurrent terms as fed to the gates: `U h_{t-1}`, layer-normalized
    /// when the variant uses it.
    pub rec_z: Matrix,
    pub rec_h: Matrix,
    pub ln_z: Option<LayerNormStats>,
    pub ln_h: Option<LayerNormStats>,
    /// Update gate.
    pub z: Matrix,
    /// Candidate state.
    pub cand: Matrix,
    /// Hidden states h_0 .. h_{T-1}.
    pub h: Matrix,
}

impl ForwardTrace {
    #[inline]
    pub fn block<'a>(&self, m: &'a Matrix, t: usize) -> &'a [f64] {
        m.row_block(t * self.batch, self.batch)
    }

    /// h_{t-1}, with h_{-1} the initial state.
    #[inline]
    pub fn h_prev(&self, t: usize) -> &[f64] {
        if t == 0 {
            self.h0.as_slice()
        } else {
            self.block(&self.h, t - 1)
        }
    }

    pub fn last_hidden(&self) -> Matrix {
        Matrix::from_vec(
            self.batch,
            self.hidden,
            self.block(&self.h, self.steps - 1).to_vec(),
        )
        .expect("block shape")
    }

    pub fn hidden_states(&self) -> Sequence {
        Sequence::new(self.steps, self.batch, self.h.clone()).expect("trace shape")
    }

    /// Update-gate pre-activation for every step.
    pub fn pre_update(&self) -> Matrix {
        let mut m = self.ff_z.clone();
        m.add_scaled(&self.rec_z, 1.0).expect("trace shape");
        m
    }

    /// Candidate pre-activation for every step.
    pub fn pre_candidate(&self) -> Matrix {
        let mut m = self.ff_h.clone();
        m.add_scaled(&self.rec_h, 1.0).expect("trace shape");
        m
    }
}

pub(crate) fn check_inputs(params: &CellParams, x: &Sequence, h0: Option<&Matrix>) -> Result<()> {
    params.validate()?;
    if x.dim() != params.input() {
        return Err(Error::shape(
            "cell_forward",
            format!("input dim {} vs weights {}", x.dim(), params.input()),
        ));
    }
    if x.steps() == 0 || x.batch() == 0 {
        return Err(Error::InvalidArgument("empty sequence batch".into()));
    }
    if let Some(h0) = h0 {
        if h0.shape() != (x.batch(), params.hidden()) {
            return Err(Error::shape(
                "cell_forward",
                format!(
                    "h0 {:?} vs ({}, {})",
                    h0.shape(),
                    x.batch(),
                    params.hidden()
                ),
            ));
        }
    }
    Ok(())
}

/// Reference forward pass, one step at a time.
///
/// Projects each timestep separately, then batch-normalizes the stacked
/// projections, then runs the recurrence with a fresh product per gate and
/// step. [`crate::fused::fused_forward`] computes the same thing with
/// preallocated buffers.
///
/// A non-finite hidden state yields [`Error::Explosion`] naming the step.
pub fn cell_forward(
    params: &CellParams,
    cfg: &VariantConfig,
    x: &Sequence,
    h0: Option<&Matrix>,
    training: bool,
) -> Result<ForwardTrace> {
    check_inputs(params, x, h0)?;
    let (steps, batch, hidden) = (x.steps(), x.batch(), params.hidden());
    let rows = steps * batch;

    let mut proj_z = Matrix::zeros(rows, hidden);
    let mut proj_h = Matrix::zeros(rows, hidden);
    for t in 0..steps {
        let xt = x.step_matrix(t);
        proj_z
            .row_block_mut(t * batch, batch)
            .copy_from_slice(matmul_nt(&xt, &params.wz)?.as_slice());
        proj_h
            .row_block_mut(t * batch, batch)
            .copy_from_slice(matmul_nt(&xt, &params.wh)?.as_slice());
    }

    let (ff_z, bn_z) = feedforward_norm(proj_z, &params.bn_z, cfg, training)?;
    let (ff_h, bn_h) = feedforward_norm(proj_h, &params.bn_h, cfg, training)?;

    let h0 = h0.cloned().unwrap_or_else(|| Matrix::zeros(batch, hidden));
    let mut rec_z = Matrix::zeros(rows, hidden);
    let mut rec_h = Matrix::zeros(rows, hidden);
    let mut ln_z = cfg.uses_layer_norm().then(|| LayerNormStats::zeros(rows));
    let mut ln_h = cfg.uses_layer_norm().then(|| LayerNormStats::zeros(rows));
    let mut z = Matrix::zeros(rows, hidden);
    let mut cand = Matrix::zeros(rows, hidden);
    let mut h = Matrix::zeros(rows, hidden);

    let mut h_prev = h0.clone();
    for t in 0..steps {
        let mut rz = matmul_nt(&h_prev, &params.uz)?;
        let mut rh = matmul_nt(&h_prev, &params.uh)?;
        if let (Some(sz), Some(sh)) = (ln_z.as_mut(), ln_h.as_mut()) {
            for b in 0..batch {
                let row = t * batch + b;
                let (vz, vh) = (rz.row(b).to_vec(), rh.row(b).to_vec());
                let (mz, varz) = layer_norm_into(&vz, LN_EPS, rz.row_mut(b));
                let (mh, varh) = layer_norm_into(&vh, LN_EPS, rh.row_mut(b));
                sz.mean[row] = mz;
                sz.var[row] = varz;
                sh.mean[row] = mh;
                sh.var[row] = varh;
            }
        }
        let mut h_next = Matrix::zeros(batch, hidden);
        for b in 0..batch {
            let row = t * batch + b;
            for j in 0..hidden {
                let az = ff_z[(row, j)] + rz[(b, j)];
                let ah = ff_h[(row, j)] + rh[(b, j)];
                let zt = sigmoid(az);
                let ct = cfg.activate(ah);
                let hp = h_prev[(b, j)];
                let ht = zt * hp + (1.0 - zt) * ct;
                z[(row, j)] = zt;
                cand[(row, j)] = ct;
                h_next[(b, j)] = ht;
            }
        }
        if !h_next.is_finite() {
            return Err(Error::Explosion {
                stage: Stage::Forward,
                timestep: Some(t),
            });
        }
        rec_z
            .row_block_mut(t * batch, batch)
            .copy_from_slice(rz.as_slice());
        rec_h
            .row_block_mut(t * batch, batch)
            .copy_from_slice(rh.as_slice());
        h.row_block_mut(t * batch, batch)
            .copy_from_slice(h_next.as_slice());
        h_prev = h_next;
    }

    Ok(ForwardTrace {
        cfg: *cfg,
        steps,
        batch,
        hidden,
        training,
        x: x.clone(),
        h0,
        ff_z,
        ff_h,
        bn_z,
        bn_h,
        rec_z,
        rec_h,
        ln_z,
        ln_h,
        z,
        cand,
        h,
    })
}

pub(crate) fn feedforward_norm(
    proj: Matrix,
    state: &BatchNormState,
    cfg: &VariantConfig,
    training: bool,
) -> Result<(Matrix, Option<BatchNormCache>)> {
    if !cfg.uses_batch_norm() {
        return Ok((proj, None));
    }
    let mut out = Matrix::zeros(proj.rows(), proj.cols());
    let cache = batch_norm_apply(&proj, state, training, &mut out)?;
    Ok((out, Some(cache)))
}
