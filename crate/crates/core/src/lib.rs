//! Li-GRU and SLi-GRU cells with manual backpropagation, stability
//! diagnostics and the adding-task experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adding_task;
pub mod backprop;
pub mod cells;
pub mod checks;
pub mod diagnostics;
pub mod error;
pub mod fused;
pub mod gradcheck;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod runner;
pub mod stabilizers;
pub mod tensors;

pub use error::{Error, Result};
