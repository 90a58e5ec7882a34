use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

/// Random matrix with orthonormal rows or columns, whichever are fewer.
///
/// Draws a standard Gaussian matrix and orthonormalizes its shorter side
/// with modified Gram-Schmidt, run twice per vector so the result is
/// orthonormal to working precision. Square outputs are orthogonal.
pub fn orthogonal_init(rows: usize, cols: usize, rng: &mut Rng) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "orthogonal_init needs nonzero dimensions, got {rows}x{cols}"
        )));
    }
    // Work on the long-side vectors: `count` vectors of length `len`.
    let (count, len) = if rows >= cols {
        (cols, rows)
    } else {
        (rows, cols)
    };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = vec![0.0; len];
        rng.fill_gaussian(&mut v);
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(x, &qi)| *x -= proj * qi);
            }
        }
        let norm = super::matrix::l2_norm(&v);
        // A draw inside the span of earlier vectors has probability zero;
        // redraw rather than divide by a tiny norm.
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let m = if rows >= cols {
        Matrix::from_fn(rows, cols, |i, j| basis[j][i])
    } else {
        Matrix::from_fn(rows, cols, |i, j| basis[i][j])
    };
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul, matmul_nt, matmul_tn};

    fn max_defect(g: &Matrix) -> f64 {
        let n = g.rows();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    #[test]
    fn square_is_orthogonal() {
        let u = orthogonal_init(4, 4, &mut Rng::new(1)).unwrap();
        assert!(max_defect(&matmul_tn(&u, &u).unwrap()) <= 1e-10);
        assert!(max_defect(&matmul_nt(&u, &u).unwrap()) <= 1e-10);
    }

    #[test]
    fn one_by_one_is_sign() {
        for seed in 0..5 {
            let u = orthogonal_init(1, 1, &mut Rng::new(seed)).unwrap();
            assert!((u[(0, 0)].abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rectangular_has_orthonormal_short_side() {
        let tall = orthogonal_init(7, 3, &mut Rng::new(2)).unwrap();
        assert!(max_defect(&matmul_tn(&tall, &tall).unwrap()) <= 1e-10);
        let wide = orthogonal_init(3, 7, &mut Rng::new(2)).unwrap();
        assert!(max_defect(&matmul_nt(&wide, &wide).unwrap()) <= 1e-10);
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(orthogonal_init(0, 3, &mut Rng::new(0)).is_err());
        assert!(orthogonal_init(3, 0, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn reproducible_from_seed() {
        let a = orthogonal_init(16, 16, &mut Rng::new(9)).unwrap();
        let b = orthogonal_init(16, 16, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let c = orthogonal_init(16, 16, &mut Rng::new(10)).unwrap();
        assert_ne!(a, c);
        // Orthogonal maps preserve norms.
        let x = Matrix::from_fn(16, 1, |i, _| i as f64);
        let y = matmul(&a, &x).unwrap();
        assert!((y.frobenius_norm() - x.frobenius_norm()).abs() < 1e-10);
    }
}
