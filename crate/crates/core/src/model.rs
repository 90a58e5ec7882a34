//! The adding-task network: one recurrent layer plus a linear readout on the
//! final hidden state.

use crate::adding_task::{init_readout, mse, readout_backward, readout_forward, AddingBatch};
use crate::backprop::{bptt, Gradients};
use crate::cells::{CellParams, ForwardTrace, VariantConfig};
use crate::error::{Error, Result, Stage};
use crate::fused::fused_forward;
use crate::linalg::{Matrix, Rng};
use crate::tensors::Tensors;

impl Tensors for CellParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.wz.as_slice(),
            self.wh.as_slice(),
            self.uz.as_slice(),
            self.uh.as_slice(),
            &self.bn_z.gamma,
            &self.bn_z.beta,
            &self.bn_h.gamma,
            &self.bn_h.beta,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.wz.as_mut_slice(),
            self.wh.as_mut_slice(),
            self.uz.as_mut_slice(),
            self.uh.as_mut_slice(),
            &mut self.bn_z.gamma,
            &mut self.bn_z.beta,
            &mut self.bn_h.gamma,
            &mut self.bn_h.beta,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cell: CellParams,
    /// `1 x hidden`
    pub readout: Matrix,
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub cell: Gradients,
    pub readout: Matrix,
}

impl Tensors for Model {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.cell.tensors();
        v.push(self.readout.as_slice());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.cell.tensors_mut();
        v.push(self.readout.as_mut_slice());
        v
    }
}

impl Tensors for ModelGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.cell.tensors();
        v.push(self.readout.as_slice());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.cell.tensors_mut();
        v.push(self.readout.as_mut_slice());
        v
    }
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct Step {
    pub trace: ForwardTrace,
    pub predictions: Vec<f64>,
    pub mse: f64,
    pub grads: ModelGrads,
}

impl Model {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let cell = CellParams::init(input, hidden, rng)?;
        let readout = init_readout(hidden, rng);
        Ok(Model { cell, readout })
    }

    pub fn forward(
        &self,
        cfg: &VariantConfig,
        batch: &AddingBatch,
        training: bool,
    ) -> Result<(ForwardTrace, Vec<f64>)> {
        let trace = fused_forward(&self.cell, cfg, &batch.inputs, None, training)?;
        let pred = readout_forward(&trace.last_hidden(), &self.readout)?;
        Ok((trace, pred))
    }

    /// MSE of the final-step prediction and its gradients.
    pub fn loss_and_grads(&self, cfg: &VariantConfig, batch: &AddingBatch) -> Result<Step> {
        let (trace, pred) = self.forward(cfg, batch, true)?;
        let loss = mse(&pred, &batch.targets)?;
        if !loss.is_finite() {
            return Err(Error::Explosion {
                stage: Stage::Loss,
                timestep: None,
            });
        }
        let h_last = trace.last_hidden();
        let ro = readout_backward(&h_last, &self.readout, &pred, &batch.targets);
        let (steps, b, hidden) = (trace.steps, trace.batch, trace.hidden);
        let mut upstream = Matrix::zeros(steps * b, hidden);
        upstream
            .row_block_mut((steps - 1) * b, b)
            .copy_from_slice(ro.h_last.as_slice());
        let cell = bptt(&self.cell, &trace, &upstream)?;
        Ok(Step {
            trace,
            predictions: pred,
            mse: loss,
            grads: ModelGrads {
                cell,
                readout: ro.wo,
            },
        })
    }
}
