//! The adding problem.
//!
//! Each sequence has two channels: a value drawn from U(0, 1) and a marker
//! that is 1 at exactly two positions, one in `[0, T/2 - 1]` and one in
//! `[T/2, T - 1]`. The target is the sum of the two marked values.

use std::io::Write;

use crate::cells::Sequence;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct AddingBatch {
    /// `T x batch x 2`
    pub inputs: Sequence,
    pub targets: Vec<f64>,
    pub markers: Vec<[usize; 2]>,
}

impl AddingBatch {
    pub fn steps(&self) -> usize {
        self.inputs.steps()
    }

    pub fn batch(&self) -> usize {
        self.inputs.batch()
    }

    /// Value and marker of sequence `b` at time `t`.
    pub fn at(&self, t: usize, b: usize) -> (f64, f64) {
        let row = self.inputs.data().row(t * self.batch() + b);
        (row[0], row[1])
    }

    /// Dumps the batch as CSV with columns `sequence,t,channel0,channel1`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sequence,t,channel0,channel1")?;
        for b in 0..self.batch() {
            for t in 0..self.steps() {
                let (v, m) = self.at(t, b);
                writeln!(w, "{b},{t},{v},{m}")?;
            }
        }
        Ok(())
    }
}

pub fn generate(steps: usize, batch: usize, rng: &mut Rng) -> Result<AddingBatch> {
    if steps < 2 || !steps.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "adding task needs an even sequence length >= 2, got {steps}"
        )));
    }
    if batch == 0 {
        return Err(Error::InvalidArgument(
            "adding task needs batch >= 1".into(),
        ));
    }
    let half = steps / 2;
    let mut data = Matrix::zeros(steps * batch, 2);
    let mut targets = Vec::with_capacity(batch);
    let mut markers = Vec::with_capacity(batch);
    for b in 0..batch {
        for t in 0..steps {
            data[(t * batch + b, 0)] = rng.uniform();
        }
        let first = rng.below(half as u64) as usize;
        let second = half + rng.below(half as u64) as usize;
        data[(first * batch + b, 1)] = 1.0;
        data[(second * batch + b, 1)] = 1.0;
        targets.push(data[(first * batch + b, 0)] + data[(second * batch + b, 0)]);
        markers.push([first, second]);
    }
    Ok(AddingBatch {
        inputs: Sequence::new(steps, batch, data)?,
        targets,
        markers,
    })
}

/// `ŷ = h_last Woᵀ` for a `1 x hidden` readout.
pub fn readout_forward(h_last: &Matrix, wo: &Matrix) -> Result<Vec<f64>> {
    if wo.rows() != 1 || wo.cols() != h_last.cols() {
        return Err(Error::shape(
            "readout_forward",
            format!("readout {:?} for hidden {}", wo.shape(), h_last.cols()),
        ));
    }
    Ok((0..h_last.rows())
        .map(|b| crate::linalg::dot(h_last.row(b), wo.row(0)))
        .collect())
}

pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "mse",
            format!("{} predictions, {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64)
}

/// Gradients of the MSE through the readout.
#[derive(Debug, Clone)]
pub struct ReadoutGrads {
    /// `1 x hidden`
    pub wo: Matrix,
    /// `batch x hidden`, dE/dh_last
    pub h_last: Matrix,
}

pub fn readout_backward(
    h_last: &Matrix,
    wo: &Matrix,
    pred: &[f64],
    target: &[f64],
) -> ReadoutGrads {
    let n = pred.len() as f64;
    let mut d_wo = Matrix::zeros(1, wo.cols());
    let mut d_h = Matrix::zeros(h_last.rows(), h_last.cols());
    for b in 0..h_last.rows() {
        let dp = 2.0 * (pred[b] - target[b]) / n;
        for j in 0..wo.cols() {
            d_wo[(0, j)] += dp * h_last[(b, j)];
            d_h[(b, j)] = dp * wo[(0, j)];
        }
    }
    ReadoutGrads {
        wo: d_wo,
        h_last: d_h,
    }
}

/// Small uniform readout initialization, `U(-1/sqrt(hidden), 1/sqrt(hidden))`.
pub fn init_readout(hidden: usize, rng: &mut Rng) -> Matrix {
    let limit = 1.0 / (hidden as f64).sqrt();
    Matrix::from_fn(1, hidden, |_, _| rng.uniform_in(-limit, limit))
}
