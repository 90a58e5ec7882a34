use super::matrix::{l2_norm, Matrix};
use super::rng::Rng;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Seed of the fixed start vector used when no warm start is given.
const START_SEED: u64 = 0x005e_ed0f_5ec7;

#[derive(Debug, Clone)]
pub struct SpectralEstimate {
    /// Estimated largest singular value.
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final right singular vector estimate, unit length. Feed it back as a
    /// warm start on the next call for a slowly changing matrix.
    pub vector: Vec<f64>,
}

/// Largest singular value of `m` by power iteration on `mᵀm`, starting from a
/// fixed pseudo-random vector.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> SpectralEstimate {
    let mut rng = Rng::new(START_SEED);
    let mut start = vec![0.0; m.cols()];
    rng.fill_gaussian(&mut start);
    spectral_norm_from(m, &start, tol, max_iter)
}

/// Power iteration from a caller-supplied start vector.
///
/// Converged once the relative change of the estimate between successive
/// iterations drops below `tol`. A zero matrix (or a start vector in its
/// null space) reports 0 as converged.
pub fn spectral_norm_from(
    m: &Matrix,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> SpectralEstimate {
    assert!(tol > 0.0, "tol must be positive");
    assert_eq!(start.len(), m.cols(), "start vector length");
    let (rows, cols) = m.shape();

    let mut v = start.to_vec();
    if !normalize(&mut v) {
        // Degenerate start: fall back to the all-ones direction.
        v.iter_mut().for_each(|x| *x = 1.0);
        normalize(&mut v);
    }
    let mut mv = vec![0.0; rows];
    let mut estimate = 0.0;

    for it in 1..=max_iter.max(1) {
        // mv = m v, estimate = |m v| (Rayleigh quotient of mᵀm is |mv|²).
        for (i, out) in mv.iter_mut().enumerate() {
            *out = super::matrix::dot(m.row(i), &v);
        }
        let next = l2_norm(&mv);
        if next == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
                vector: v,
            };
        }
        // v = mᵀ (m v), renormalized.
        v.iter_mut().for_each(|x| *x = 0.0);
        for (i, &s) in mv.iter().enumerate() {
            for (x, &a) in v.iter_mut().zip(m.row(i)) {
                *x += a * s;
            }
        }
        normalize(&mut v);

        let rel = (next - estimate).abs() / next;
        estimate = next;
        if rel < tol {
            return SpectralEstimate {
                value: estimate,
                converged: true,
                iterations: it,
                vector: v,
            };
        }
    }
    debug_assert!(cols == v.len());
    SpectralEstimate {
        value: estimate,
        converged: false,
        iterations: max_iter,
        vector: v,
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= n);
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_norm() {
        let est = spectral_norm(&Matrix::identity(4), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert!((est.value - 1.0).abs() < 1e-12);
        assert!(est.converged);
    }

    #[test]
    fn diagonal_matrix() {
        let est = spectral_norm(&Matrix::diag(&[3.0, 1.0, 0.5]), 1e-14, 1000);
        assert!((est.value - 3.0).abs() < 1e-10, "{}", est.value);
    }

    #[test]
    fn zero_matrix_reports_zero_converged() {
        let est = spectral_norm(&Matrix::zeros(3, 5), DEFAULT_TOL, DEFAULT_MAX_ITER);
        assert_eq!(est.value, 0.0);
        assert!(est.converged);
    }

    #[test]
    fn non_convergence_is_flagged() {
        // Two nearly tied singular values with a start vector mostly on the
        // smaller one: one iteration cannot settle.
        let m = Matrix::diag(&[1.0, 0.999_999]);
        let est = spectral_norm_from(&m, &[1e-3, 1.0], 1e-15, 1);
        assert!(!est.converged);
        assert!(est.value > 0.99);
    }

    #[test]
    fn rectangular() {
        let m = Matrix::from_rows(&[[0.0, 2.0, 0.0], [0.0, 0.0, 0.0]]);
        let est = spectral_norm(&m, 1e-12, 100);
        assert!((est.value - 2.0).abs() < 1e-12);
    }
}
