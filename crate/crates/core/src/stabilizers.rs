//! Training-time interventions against exploding gradients: soft orthogonal
//! regularization, decoupled weight decay and gradient clipping.

use serde::{Deserialize, Serialize};

use crate::cells::CellParams;
use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_tn, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizerConfig {
    #[serde(default)]
    pub sor_lambda: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub clip_threshold: Option<f64>,
}

impl StabilizerConfig {
    pub const NONE: StabilizerConfig = StabilizerConfig {
        sor_lambda: 0.0,
        weight_decay: 0.0,
        clip_threshold: None,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.sor_lambda >= 0.0) || !self.sor_lambda.is_finite() {
            return Err(Error::Config(format!(
                "sor_lambda must be >= 0, got {}",
                self.sor_lambda
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if let Some(c) = self.clip_threshold {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::Config(format!(
                    "clip_threshold must be > 0, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SorPenalty {
    pub loss: f64,
    pub d_uz: Matrix,
    pub d_uh: Matrix,
}

/// `lambda * (|UzᵀUz - I|_F² + |UhᵀUh - I|_F²)` and its gradients
/// `4 lambda U (UᵀU - I)`.
pub fn sor_penalty(uz: &Matrix, uh: &Matrix, lambda: f64) -> Result<SorPenalty> {
    let (loss_z, d_uz) = orthogonality_defect(uz, lambda)?;
    let (loss_h, d_uh) = orthogonality_defect(uh, lambda)?;
    Ok(SorPenalty {
        loss: loss_z + loss_h,
        d_uz,
        d_uh,
    })
}

fn orthogonality_defect(u: &Matrix, lambda: f64) -> Result<(f64, Matrix)> {
    if u.rows() != u.cols() {
        return Err(Error::shape(
            "sor_penalty",
            format!("non-square {:?}", u.shape()),
        ));
    }
    let mut gram = matmul_tn(u, u)?;
    for i in 0..u.rows() {
        gram[(i, i)] -= 1.0;
    }
    let sq = gram.as_slice().iter().map(|x| x * x).sum::<f64>();
    let grad = matmul(u, &gram)?.scale(4.0 * lambda);
    Ok((lambda * sq, grad))
}

/// Decoupled weight decay: `w <- w * (1 - lr * wd)` on the feed-forward and
/// recurrent matrices. Batch-norm parameters are left alone.
pub fn apply_weight_decay(params: &mut CellParams, wd: f64, lr: f64) {
    if wd == 0.0 {
        return;
    }
    let factor = 1.0 - lr * wd;
    for m in [
        &mut params.wz,
        &mut params.wh,
        &mut params.uz,
        &mut params.uh,
    ] {
        m.as_mut_slice().iter_mut().for_each(|w| *w *= factor);
    }
}
