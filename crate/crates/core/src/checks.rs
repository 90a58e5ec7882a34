//! The acceptance criteria as runnable checks, shared by `ligru check` and the
//! acceptance test target.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use crate::backprop::bptt;
use crate::cells::{
    cell_forward, Activation, CellParams, FeedforwardNorm, RecurrentNorm, Sequence, VariantConfig,
};
use crate::diagnostics::{empirical_ratios, eta_layernorm, eta_standard, gamma1};
use crate::error::Result;
use crate::fused::{benchmark, fused_forward, BenchConfig, BenchOptions};
use crate::gradcheck;
use crate::linalg::{orthogonal_init, spectral_norm, Matrix, Rng, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::runner::{run_experiment, ExperimentConfig, Preset, VariantName};

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Verdict {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Manual BPTT against central differences over every variant, with and
/// without batch norm, hidden 4 and 8, T 3 and 12, batch 2.
pub fn gradient_exactness() -> Result<Verdict> {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut cases = 0;
    for ff in [FeedforwardNorm::BatchNorm, FeedforwardNorm::None] {
        for cfg in VariantConfig::all(ff) {
            for hidden in [4, 8] {
                for steps in [3, 12] {
                    let r = gradcheck::check(&cfg, hidden, steps, 2, 1000 + cases)?;
                    cases += 1;
                    if r.max_rel_error >= worst.0 {
                        worst = (
                            r.max_rel_error,
                            format!(
                                "{} h{hidden} T{steps} {}[{}]",
                                cfg.label(),
                                r.worst.0,
                                r.worst.1
                            ),
                        );
                    }
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Verdict::new(
        "1 gradient exactness",
        worst.0 <= 1e-4 && secs < 60.0,
        format!(
            "{cases} cases, max rel err {:.3e} at {} (tol 1e-4), {secs:.1}s (limit 60s)",
            worst.0, worst.1
        ),
    ))
}

/// Every adjacent state-gradient ratio of a standard Li-GRU stays below η.
pub fn theorem_bound() -> Result<Verdict> {
    let start = Instant::now();
    let (hidden, steps, batch) = (16, 30, 4);
    let mut worst_margin = f64::NEG_INFINITY;
    let mut max_ratio = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = Rng::new(5000 + seed);
        let params = CellParams::init(2, hidden, &mut rng)?;
        let x = Sequence::new(
            steps,
            batch,
            Matrix::from_fn(steps * batch, 2, |_, _| rng.uniform()),
        )?;
        let trace = cell_forward(&params, &VariantConfig::LIGRU, &x, None, true)?;
        let mut upstream = Matrix::zeros(steps * batch, hidden);
        upstream
            .row_block_mut((steps - 1) * batch, batch)
            .iter_mut()
            .for_each(|g| *g = rng.gaussian());
        let grads = bptt(&params, &trace, &upstream)?;
        let nz = spectral_norm(&params.uz, DEFAULT_TOL, DEFAULT_MAX_ITER).value;
        let nh = spectral_norm(&params.uh, DEFAULT_TOL, DEFAULT_MAX_ITER).value;
        let eta = eta_standard(gamma1(&trace), nz, nh);
        let ratio = empirical_ratios(&grads.state_norms_with_initial());
        max_ratio = max_ratio.max(ratio);
        worst_margin = worst_margin.max(ratio - eta);
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Verdict::new(
        "2 theorem bound",
        worst_margin <= 1e-9 && secs < 60.0,
        format!("50 instances, max ratio {max_ratio:.4}, max(ratio - eta) {worst_margin:.4} (must be <= 1e-9), {secs:.1}s"),
    ))
}

/// Unit sigmas reduce the layer-norm η to the standard one; orthogonal
/// recurrent weights give γ₁/4 + 1.
pub fn eta_consistency() -> Result<Verdict> {
    let mut rng = Rng::new(77);
    let mut exact = true;
    for _ in 0..100 {
        let (g, nz, nh) = (
            rng.uniform() * 10.0,
            rng.uniform() * 3.0,
            rng.uniform() * 3.0,
        );
        exact &= eta_layernorm(g, nz, nh, 1.0, 1.0)? == eta_standard(g, nz, nh);
    }
    let mut worst = 0.0f64;
    for n in [4, 16, 64] {
        let uz = orthogonal_init(n, n, &mut rng)?;
        let uh = orthogonal_init(n, n, &mut rng)?;
        let nz = spectral_norm(&uz, 1e-12, 10_000).value;
        let nh = spectral_norm(&uh, 1e-12, 10_000).value;
        for g in [0.0, 0.5, 1.0, 3.7] {
            worst = worst.max((eta_standard(g, nz, nh) - (g / 4.0 + 1.0)).abs());
        }
    }
    Ok(Verdict::new(
        "3 eta consistency",
        exact && worst <= 1e-9,
        format!(
            "unit-sigma reduction exact: {exact}; orthogonal case max dev {worst:.2e} (tol 1e-9)"
        ),
    ))
}

/// Desk-preset SLi-GRU, seed 1: final-epoch MSE at most 0.05.
pub fn desk_run(out_dir: &Path) -> Result<Verdict> {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        seed: 1,
        metrics_path: out_dir.join("desk-sligru.csv"),
        ..ExperimentConfig::preset(Preset::Desk, VariantName::Sligru)
    };
    let out = run_experiment(&cfg, None)?;
    let mse = out.report.mse;
    let secs = start.elapsed().as_secs_f64();
    Ok(Verdict::new(
        "4 adding-task desk run",
        out.exploded_at.is_none() && out.epochs_completed == cfg.epochs && mse <= 0.05 && secs < 900.0,
        format!(
            "SLi-GRU T={} hidden={} {} epochs: final MSE {mse:.5} (limit 0.05, baseline 1/6), {secs:.1}s",
            cfg.steps, cfg.hidden, out.epochs_completed
        ),
    ))
}

/// Batch size used by the instability demonstration.
pub const INSTABILITY_BATCH: usize = 8;

/// Standard Li-GRU at T=2000, hidden=256 must explode or push η past 1.5
/// within 500 epochs while the SLi-GRU keeps η in [0.5, 1.5] throughout,
/// for each of three seeds. A run stops as soon as its outcome is decided.
pub fn instability(out_dir: &Path) -> Result<Verdict> {
    let start = Instant::now();
    let mut notes = Vec::new();
    let mut passed = true;
    for seed in 1..=3u64 {
        let base = ExperimentConfig {
            steps: 2000,
            hidden: 256,
            batch: INSTABILITY_BATCH,
            epochs: 500,
            seed,
            ..ExperimentConfig::preset(Preset::Desk, VariantName::Ligru)
        };

        let ligru = ExperimentConfig {
            metrics_path: out_dir.join(format!("instability-ligru-{seed}.csv")),
            ..base.clone()
        };
        let hit = first_epoch(&ligru, |r| r.exploded || r.eta > 1.5)?;
        let ligru_ok = hit.is_some();
        match hit {
            Some(row) => notes.push(format!(
                "seed {seed}: Li-GRU {} at epoch {} (eta {:.3})",
                if row.exploded {
                    "exploded"
                } else {
                    "eta > 1.5"
                },
                row.epoch,
                row.eta
            )),
            None => notes.push(format!("seed {seed}: Li-GRU stayed stable for 500 epochs")),
        }

        let sligru = ExperimentConfig {
            variant: VariantConfig::SLIGRU,
            metrics_path: out_dir.join(format!("instability-sligru-{seed}.csv")),
            ..base
        };
        let left = first_epoch(&sligru, |r| r.exploded || !(0.5..=1.5).contains(&r.eta))?;
        let sligru_ok = left.is_none();
        match left {
            Some(row) => notes.push(format!(
                "SLi-GRU left [0.5, 1.5] at epoch {} (eta {:.3}, gamma1 {:.3}, grad ratio {:.3})",
                row.epoch, row.eta, row.gamma1, row.grad_ratio
            )),
            None => notes.push("SLi-GRU kept eta in [0.5, 1.5] for 500 epochs".into()),
        }
        passed &= ligru_ok && sligru_ok;
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs < 3600.0;
    Ok(Verdict::new(
        "5 instability demonstration",
        passed,
        format!(
            "batch {INSTABILITY_BATCH}; {}; {secs:.1}s",
            notes.join("; ")
        ),
    ))
}

#[derive(Debug, Clone, Copy)]
struct Row {
    epoch: usize,
    eta: f64,
    gamma1: f64,
    grad_ratio: f64,
    exploded: bool,
}

/// Runs `cfg` one epoch at a time from the metrics file and returns the
/// first row matching `stop`, ending the run there.
fn first_epoch(cfg: &ExperimentConfig, stop: impl Fn(&Row) -> bool) -> Result<Option<Row>> {
    let mut found = None;
    crate::runner::run_experiment_with(cfg, None, |report, exploded| {
        let row = Row {
            epoch: report.epoch,
            eta: report.eta,
            gamma1: report.gamma1,
            grad_ratio: report.max_adjacent_grad_ratio,
            exploded,
        };
        if stop(&row) {
            found = Some(row);
            false
        } else {
            true
        }
    })?;
    Ok(found)
}

/// Fused and reference forward agree to 1e-12 on 20 random shapes, and the
/// fused time grows linearly in T (R² ≥ 0.98).
pub fn fused_equivalence_and_scaling() -> Result<Verdict> {
    let mut rng = Rng::new(606);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let steps = 1 + rng.below(40) as usize;
        let batch = 2 + rng.below(7) as usize;
        let hidden = 1 + rng.below(48) as usize;
        let input = 1 + rng.below(5) as usize;
        let cfg = VariantConfig {
            activation: if i % 2 == 0 {
                Activation::Relu
            } else {
                Activation::Sine
            },
            recurrent_norm: if i % 4 < 2 {
                RecurrentNorm::LayerNorm
            } else {
                RecurrentNorm::None
            },
            feedforward_norm: if i % 3 == 0 {
                FeedforwardNorm::None
            } else {
                FeedforwardNorm::BatchNorm
            },
        };
        let params = CellParams::init(input, hidden, &mut rng)?;
        let x = Sequence::new(
            steps,
            batch,
            Matrix::from_fn(steps * batch, input, |_, _| rng.gaussian()),
        )?;
        let h0 = Matrix::from_fn(batch, hidden, |_, _| rng.uniform() - 0.5);
        let a = cell_forward(&params, &cfg, &x, Some(&h0), true)?;
        let b = fused_forward(&params, &cfg, &x, Some(&h0), true)?;
        for (m, n) in [(&a.h, &b.h), (&a.z, &b.z), (&a.cand, &b.cand)] {
            for (p, q) in m.as_slice().iter().zip(n.as_slice()) {
                worst = worst.max((p - q).abs());
            }
        }
    }
    let grid: Vec<BenchConfig> = (1..=8)
        .map(|k| BenchConfig {
            steps: 250 * k,
            batch: 8,
            hidden: 64,
        })
        .collect();
    let table = benchmark(&grid, BenchOptions::default())?;
    let (r2_naive, r2_fused) = table.r2_vs_steps().unwrap_or((0.0, 0.0));
    let speedups: Vec<String> = table
        .rows
        .iter()
        .map(|r| format!("{:.2}", r.speedup()))
        .collect();
    Ok(Verdict::new(
        "6 fused equivalence and scaling",
        worst <= 1e-12 && r2_fused >= 0.98,
        format!(
            "max abs dev {worst:.2e} over 20 shapes (tol 1e-12); fused R^2 vs T {r2_fused:.4} (min 0.98), naive R^2 {r2_naive:.4}; speedups [{}]",
            speedups.join(", ")
        ),
    ))
}

/// Two runs of the same config produce byte-identical metrics.
pub fn determinism(out_dir: &Path) -> Result<Verdict> {
    let mut files = Vec::new();
    for run in 0..2 {
        let cfg = ExperimentConfig {
            steps: 60,
            hidden: 16,
            batch: 8,
            epochs: 20,
            seed: 9,
            metrics_path: out_dir.join(format!("determinism-{run}.csv")),
            ..ExperimentConfig::preset(Preset::Desk, VariantName::Sligru)
        };
        run_experiment(&cfg, None)?;
        files.push(std::fs::read(&cfg.metrics_path)?);
    }
    let same = files[0] == files[1];
    Ok(Verdict::new(
        "7 determinism",
        same && !files[0].is_empty(),
        format!("two runs, {} bytes each, identical: {same}", files[0].len()),
    ))
}

/// Every criterion in order.
pub fn all(out_dir: &Path) -> Result<Vec<Verdict>> {
    Ok(vec![
        gradient_exactness()?,
        theorem_bound()?,
        eta_consistency()?,
        desk_run(out_dir)?,
        instability(out_dir)?,
        fused_equivalence_and_scaling()?,
        determinism(out_dir)?,
    ])
}
