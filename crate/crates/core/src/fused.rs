//! Fused forward pass and the naive-vs-fused benchmark.
//!
//! The fused path computes both feed-forward projections for all timesteps
//! in one product each and allocates the whole trace up front. Inside the
//! time loop it writes the two recurrent products straight into the trace,
//! normalizes them in place and updates all gates in one elementwise sweep.
//! Nothing is allocated by this module inside the loop.

use std::io::Write;
use std::time::Instant;

use crate::cells::{
    check_inputs, feedforward_norm, sigmoid, CellParams, ForwardTrace, LayerNormStats, Sequence,
    VariantConfig, LN_EPS,
};
use crate::error::{Error, Result, Stage};
use crate::linalg::{gemm, Matrix, Op, Rng};

#[cfg(debug_assertions)]
thread_local! {
    static BUFFERS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Number of buffers the fused path has allocated so far on this thread
/// (debug builds only; always 0 in release).
pub fn buffer_allocations() -> usize {
    #[cfg(debug_assertions)]
    {
        BUFFERS.with(|b| b.get())
    }
    #[cfg(not(debug_assertions))]
    {
        0
    }
}

fn buffer(rows: usize, cols: usize) -> Matrix {
    #[cfg(debug_assertions)]
    BUFFERS.with(|b| b.set(b.get() + 1));
    Matrix::zeros(rows, cols)
}

fn layer_norm_in_place(v: &mut [f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    v.iter_mut().for_each(|x| *x = (*x - mean) * inv);
    (mean, var)
}

/// Same contract as [`crate::cells::cell_forward`].
pub fn fused_forward(
    params: &CellParams,
    cfg: &VariantConfig,
    x: &Sequence,
    h0: Option<&Matrix>,
    training: bool,
) -> Result<ForwardTrace> {
    check_inputs(params, x, h0)?;
    let (steps, batch, hidden) = (x.steps(), x.batch(), params.hidden());
    let rows = steps * batch;
    let block = batch * hidden;

    let mut proj_z = buffer(rows, hidden);
    let mut proj_h = buffer(rows, hidden);
    let xs = x.data();
    gemm(
        1.0,
        xs.as_slice(),
        xs.shape(),
        Op::N,
        params.wz.as_slice(),
        params.wz.shape(),
        Op::T,
        0.0,
        proj_z.as_mut_slice(),
    );
    gemm(
        1.0,
        xs.as_slice(),
        xs.shape(),
        Op::N,
        params.wh.as_slice(),
        params.wh.shape(),
        Op::T,
        0.0,
        proj_h.as_mut_slice(),
    );
    let (ff_z, bn_z) = feedforward_norm(proj_z, &params.bn_z, cfg, training)?;
    let (ff_h, bn_h) = feedforward_norm(proj_h, &params.bn_h, cfg, training)?;

    let h0 = match h0 {
        Some(m) => m.clone(),
        None => buffer(batch, hidden),
    };
    let mut rec_z = buffer(rows, hidden);
    let mut rec_h = buffer(rows, hidden);
    let mut z = buffer(rows, hidden);
    let mut cand = buffer(rows, hidden);
    let mut h = buffer(rows, hidden);
    let layer_norm = cfg.uses_layer_norm();
    let mut ln_z = layer_norm.then(|| LayerNormStats::zeros(rows));
    let mut ln_h = layer_norm.then(|| LayerNormStats::zeros(rows));

    #[cfg(debug_assertions)]
    let before_loop = buffer_allocations();

    let uz = params.uz.as_slice();
    let uh = params.uh.as_slice();
    for t in 0..steps {
        let (done, rest) = h.as_mut_slice().split_at_mut(t * block);
        let h_prev: &[f64] = if t == 0 {
            h0.as_slice()
        } else {
            &done[(t - 1) * block..]
        };
        let h_out = &mut rest[..block];
        let rz = rec_z.row_block_mut(t * batch, batch);
        let rh = rec_h.row_block_mut(t * batch, batch);
        gemm(
            1.0,
            h_prev,
            (batch, hidden),
            Op::N,
            uz,
            (hidden, hidden),
            Op::T,
            0.0,
            rz,
        );
        gemm(
            1.0,
            h_prev,
            (batch, hidden),
            Op::N,
            uh,
            (hidden, hidden),
            Op::T,
            0.0,
            rh,
        );

        let ff_zt = ff_z.row_block(t * batch, batch);
        let ff_ht = ff_h.row_block(t * batch, batch);
        let zt = z.row_block_mut(t * batch, batch);
        let ct = cand.row_block_mut(t * batch, batch);
        let mut finite = true;
        for b in 0..batch {
            let span = b * hidden..(b + 1) * hidden;
            if let (Some(sz), Some(sh)) = (ln_z.as_mut(), ln_h.as_mut()) {
                let r = t * batch + b;
                (sz.mean[r], sz.var[r]) = layer_norm_in_place(&mut rz[span.clone()]);
                (sh.mean[r], sh.var[r]) = layer_norm_in_place(&mut rh[span.clone()]);
            }
            for k in span {
                let gate = sigmoid(ff_zt[k] + rz[k]);
                let c = cfg.activate(ff_ht[k] + rh[k]);
                let hv = gate * h_prev[k] + (1.0 - gate) * c;
                zt[k] = gate;
                ct[k] = c;
                h_out[k] = hv;
                finite &= hv.is_finite();
            }
        }
        if !finite {
            return Err(Error::Explosion {
                stage: Stage::Forward,
                timestep: Some(t),
            });
        }
    }

    #[cfg(debug_assertions)]
    debug_assert_eq!(
        before_loop,
        buffer_allocations(),
        "buffer allocated inside the time loop"
    );

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

/// One benchmark configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub steps: usize,
    pub batch: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: BenchConfig,
    pub naive: Timing,
    pub fused: Timing,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.naive.mean_ms / self.fused.mean_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub warmups: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmups: 3,
            repetitions: 10,
            seed: 0,
        }
    }
}

fn stats(samples: &[f64]) -> Timing {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Timing {
        mean_ms: mean,
        std_ms: var.sqrt(),
    }
}

fn elapsed_ms(f: &mut impl FnMut() -> Result<()>) -> Result<f64> {
    let start = Instant::now();
    f()?;
    Ok(start.elapsed().as_secs_f64() * 1e3)
}

/// Times the reference and the fused SLi-GRU forward for each configuration.
pub fn benchmark(grid: &[BenchConfig], opts: BenchOptions) -> Result<BenchTable> {
    let cfg = VariantConfig::SLIGRU;
    let mut rows = Vec::with_capacity(grid.len());
    for &c in grid {
        let mut rng = Rng::new(opts.seed);
        let params = CellParams::init(2, c.hidden, &mut rng)?;
        let x = Sequence::new(
            c.steps,
            c.batch,
            Matrix::from_fn(c.steps * c.batch, 2, |_, _| rng.uniform()),
        )?;
        let mut naive_run = || crate::cells::cell_forward(&params, &cfg, &x, None, true).map(drop);
        let mut fused_run = || fused_forward(&params, &cfg, &x, None, true).map(drop);
        for _ in 0..opts.warmups {
            naive_run()?;
            fused_run()?;
        }
        // Alternate the two so drift in machine load hits both equally.
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..opts.repetitions.max(1) {
            a.push(elapsed_ms(&mut naive_run)?);
            b.push(elapsed_ms(&mut fused_run)?);
        }
        let (naive, fused) = (stats(&a), stats(&b));
        rows.push(BenchRow {
            config: c,
            naive,
            fused,
        });
    }
    Ok(BenchTable { rows })
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 1.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    if sxx == 0.0 {
        return 0.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let fit = my + slope * (p.0 - mx);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    1.0 - ss_res / syy
}

impl BenchTable {
    /// R² of mean time against T over rows sharing `batch` and `hidden`
    /// with the first row, for the naive and fused paths.
    pub fn r2_vs_steps(&self) -> Option<(f64, f64)> {
        let first = self.rows.first()?.config;
        let same: Vec<&BenchRow> = self
            .rows
            .iter()
            .filter(|r| r.config.batch == first.batch && r.config.hidden == first.hidden)
            .collect();
        let naive: Vec<(f64, f64)> = same
            .iter()
            .map(|r| (r.config.steps as f64, r.naive.mean_ms))
            .collect();
        let fused: Vec<(f64, f64)> = same
            .iter()
            .map(|r| (r.config.steps as f64, r.fused.mean_ms))
            .collect();
        Some((linear_fit_r2(&naive), linear_fit_r2(&fused)))
    }

    /// Long-format CSV: `T,batch,hidden,impl,mean_ms,std_ms`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "T,batch,hidden,impl,mean_ms,std_ms")?;
        for r in &self.rows {
            let c = r.config;
            for (name, t) in [("naive", &r.naive), ("fused", &r.fused)] {
                writeln!(
                    w,
                    "{},{},{},{name},{:.6},{:.6}",
                    c.steps, c.batch, c.hidden, t.mean_ms, t.std_ms
                )?;
            }
        }
        Ok(())
    }

    /// Human-readable summary: config, naive_ms, fused_ms, speedup.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:>6} {:>6} {:>6} {:>12} {:>12} {:>8}\n",
            "T", "batch", "hidden", "naive_ms", "fused_ms", "speedup"
        );
        for r in &self.rows {
            let c = r.config;
            s.push_str(&format!(
                "{:>6} {:>6} {:>6} {:>12.3} {:>12.3} {:>8.2}\n",
                c.steps,
                c.batch,
                c.hidden,
                r.naive.mean_ms,
                r.fused.mean_ms,
                r.speedup()
            ));
        }
        if let Some((n, f)) = self.r2_vs_steps() {
            s.push_str(&format!("R^2 of time vs T: naive {n:.4}, fused {f:.4}\n"));
        }
        s
    }
}
