//! Dense linear algebra used by the cells and diagnostics.

mod io;
mod matrix;
mod ortho;
mod rng;
mod spectral;

pub use io::{read_matrix, to_bytes, write_matrix};
pub use matrix::{dot, gemm, l2_norm, matmul, matmul_nt, matmul_tn, Matrix, Op, Vector};
pub use ortho::orthogonal_init;
pub use rng::Rng;
pub use spectral::{
    spectral_norm, spectral_norm_from, SpectralEstimate, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
