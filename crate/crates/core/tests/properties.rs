use proptest::prelude::*;

use ligru::backprop::{bptt, clip_global_norm, Gradients};
use ligru::cells::{
    cell_forward, Activation, CellParams, FeedforwardNorm, RecurrentNorm, Sequence, VariantConfig,
};
use ligru::diagnostics::{eta_standard, gamma1};
use ligru::fused::fused_forward;
use ligru::linalg::{matmul, orthogonal_init, spectral_norm, Matrix, Rng};
use ligru::tensors::Tensors;

fn variant(act: bool, ln: bool, bn: bool) -> VariantConfig {
    VariantConfig {
        activation: if act {
            Activation::Sine
        } else {
            Activation::Relu
        },
        recurrent_norm: if ln {
            RecurrentNorm::LayerNorm
        } else {
            RecurrentNorm::None
        },
        feedforward_norm: if bn {
            FeedforwardNorm::BatchNorm
        } else {
            FeedforwardNorm::None
        },
    }
}

fn instance(
    seed: u64,
    steps: usize,
    batch: usize,
    hidden: usize,
) -> (CellParams, Sequence, Matrix) {
    let mut rng = Rng::new(seed);
    let p = CellParams::init(2, hidden, &mut rng).unwrap();
    let x = Sequence::new(
        steps,
        batch,
        Matrix::from_fn(steps * batch, 2, |_, _| rng.gaussian()),
    )
    .unwrap();
    let h0 = Matrix::from_fn(batch, hidden, |_, _| rng.uniform());
    (p, x, h0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spectral_norm_is_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0, n in 1usize..12) {
        let mut rng = Rng::new(seed);
        let u = Matrix::from_fn(n, n, |_, _| rng.gaussian());
        let a = spectral_norm(&u.scale(c), 1e-10, 2000).value;
        let b = c.abs() * spectral_norm(&u, 1e-10, 2000).value;
        prop_assert!((a - b).abs() <= 1e-8 * b.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn orthogonal_init_reproducible(seed in any::<u64>(), n in 1usize..20) {
        let a = orthogonal_init(n, n, &mut Rng::new(seed)).unwrap();
        let b = orthogonal_init(n, n, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..10, k in 1usize..10, l in 1usize..10, n in 1usize..10) {
        let mut rng = Rng::new(seed);
        let a = Matrix::from_fn(m, k, |_, _| rng.gaussian());
        let b = Matrix::from_fn(k, l, |_, _| rng.gaussian());
        let c = Matrix::from_fn(l, n, |_, _| rng.gaussian());
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        let mut diff = left.clone();
        diff.add_scaled(&right, -1.0).unwrap();
        prop_assert!(diff.frobenius_norm() <= 1e-9 * scale);
    }

    #[test]
    fn hidden_state_is_convex_combination(seed in any::<u64>(), sine in any::<bool>(), ln in any::<bool>(), bn in any::<bool>()) {
        let (p, x, h0) = instance(seed, 7, 3, 5);
        let tr = cell_forward(&p, &variant(sine, ln, bn), &x, Some(&h0), true).unwrap();
        for t in 0..7 {
            let prev = tr.h_prev(t);
            let (h, c) = (tr.block(&tr.h, t), tr.block(&tr.cand, t));
            for k in 0..h.len() {
                let (lo, hi) = (prev[k].min(c[k]), prev[k].max(c[k]));
                prop_assert!(h[k] >= lo - 1e-15 && h[k] <= hi + 1e-15);
            }
        }
    }

    #[test]
    fn relu_states_stay_nonnegative(seed in any::<u64>(), ln in any::<bool>(), bn in any::<bool>()) {
        let (p, x, h0) = instance(seed, 10, 3, 6);
        let tr = cell_forward(&p, &variant(false, ln, bn), &x, Some(&h0), true).unwrap();
        prop_assert!(tr.h.as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn layer_normalized_terms_have_zero_mean(seed in any::<u64>(), sine in any::<bool>()) {
        let (p, x, h0) = instance(seed, 6, 2, 9);
        let tr = fused_forward(&p, &variant(sine, true, true), &x, Some(&h0), true).unwrap();
        for m in [&tr.rec_z, &tr.rec_h] {
            for r in 0..m.rows() {
                let mean = m.row(r).iter().sum::<f64>() / m.cols() as f64;
                prop_assert!(mean.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>(), sine in any::<bool>(), ln in any::<bool>()) {
        let (p, x, h0) = instance(seed, 5, 2, 4);
        let cfg = variant(sine, ln, true);
        let a = cell_forward(&p, &cfg, &x, Some(&h0), false).unwrap();
        let b = cell_forward(&p, &cfg, &x, Some(&h0), false).unwrap();
        prop_assert_eq!(a.h, b.h);
    }

    #[test]
    fn fused_matches_reference(seed in any::<u64>(), steps in 1usize..30, batch in 2usize..6, hidden in 1usize..20,
                               sine in any::<bool>(), ln in any::<bool>(), bn in any::<bool>()) {
        let (p, x, h0) = instance(seed, steps, batch, hidden);
        let cfg = variant(sine, ln, bn);
        let a = cell_forward(&p, &cfg, &x, Some(&h0), true).unwrap();
        let b = fused_forward(&p, &cfg, &x, Some(&h0), true).unwrap();
        for (u, v) in a.h.as_slice().iter().zip(b.h.as_slice()) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
    }

    #[test]
    fn generalized_bound_over_gaps(seed in any::<u64>()) {
        let (steps, batch, hidden) = (20, 3, 8);
        let mut rng = Rng::new(seed);
        let p = CellParams::init(2, hidden, &mut rng).unwrap();
        let x = Sequence::new(steps, batch, Matrix::from_fn(steps * batch, 2, |_, _| rng.uniform())).unwrap();
        let tr = cell_forward(&p, &VariantConfig::LIGRU, &x, None, true).unwrap();
        let mut up = Matrix::zeros(steps * batch, hidden);
        up.row_block_mut((steps - 1) * batch, batch).iter_mut().for_each(|g| *g = rng.gaussian());
        let g = bptt(&p, &tr, &up).unwrap();
        let eta = eta_standard(
            gamma1(&tr),
            spectral_norm(&p.uz, 1e-10, 2000).value,
            spectral_norm(&p.uh, 1e-10, 2000).value,
        );
        let norms = g.state_norms_with_initial();
        for m in 1..norms.len() {
            for q in 0..m {
                let bound = eta.powi((m - q) as i32) * norms[m];
                prop_assert!(norms[q] <= bound * (1.0 + 1e-9) + 1e-300, "p {q} m {m}: {} > {bound}", norms[q]);
            }
        }
    }

    #[test]
    fn clipping_preserves_direction(seed in any::<u64>(), threshold in 1e-3f64..10.0, scale in 1e-3f64..1e3) {
        let mut rng = Rng::new(seed);
        let p = CellParams::init(2, 4, &mut rng).unwrap();
        let mut g = Gradients::zeros_like(&p, 3, 2);
        for t in g.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.gaussian() * scale);
        }
        let before: Vec<f64> = g.tensors().concat();
        let n = g.global_norm();
        clip_global_norm(&mut g, threshold).unwrap();
        let after: Vec<f64> = g.tensors().concat();
        let dot: f64 = before.iter().zip(&after).map(|(a, b)| a * b).sum();
        let cos = dot / (n * g.global_norm());
        prop_assert!((cos - 1.0).abs() <= 1e-12);
        prop_assert!((g.global_norm() - n.min(threshold)).abs() <= 1e-12 * n.max(1.0));
    }
}
