use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ligru::checks;
use ligru::fused::{benchmark, BenchConfig, BenchOptions};
use ligru::runner::{run_experiment, ExperimentConfig, Preset, RunOutcome, VariantName};
use ligru::Error;

#[derive(Parser)]
#[command(
    name = "ligru",
    version,
    about = "Li-GRU / SLi-GRU stability experiments on the adding task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its per-epoch metrics.
    Run(RunArgs),
    /// Train all five variants (ligru, sligru, sine, gc-wd, sor) on the same data.
    Matrix(Common),
    /// Time the reference and fused forward passes over a grid of T.
    Bench(Common),
    /// Run the acceptance checks and print one line per criterion.
    Check(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics, checkpoints and benchmark tables.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    preset: PresetArg,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Variant for preset runs.
    #[arg(long, default_value = "sligru")]
    variant: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

fn load_config(common: &Common, variant: VariantName) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
                other => other,
            })?
        }
        None => ExperimentConfig::preset(common.preset.into(), variant),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        let name = cfg
            .metrics_path
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("metrics.csv"));
        cfg.metrics_path = out.join(name);
    }
    Ok(cfg)
}

fn describe(name: &str, cfg: &ExperimentConfig, out: &RunOutcome) {
    let r = &out.report;
    match out.exploded_at {
        Some(p) => println!(
            "{name}: exploded at epoch {}{} -> {}",
            p.epoch,
            p.timestep
                .map(|t| format!(" (timestep {t})"))
                .unwrap_or_default(),
            cfg.metrics_path.display()
        ),
        None => println!(
            "{name}: {} epochs, mse {:.6}, eta {:.4}, gamma1 {:.4}, |Uz| {:.4}, |Uh| {:.4} -> {}",
            out.epochs_completed,
            r.mse,
            r.eta,
            r.gamma1,
            r.norm_uz,
            r.norm_uh,
            cfg.metrics_path.display()
        ),
    }
}

fn checkpoint_dir(common: &Common, name: &str) -> Option<PathBuf> {
    common
        .out
        .as_ref()
        .map(|o| o.join(format!("checkpoint-{name}")))
}

fn run(args: &RunArgs) -> Result<(), Error> {
    let variant: VariantName = args.variant.parse()?;
    let cfg = load_config(&args.common, variant)?;
    let ck = checkpoint_dir(&args.common, variant.as_str());
    let out = run_experiment(&cfg, ck.as_deref())?;
    describe(variant.as_str(), &cfg, &out);
    Ok(())
}

fn matrix(common: &Common) -> Result<(), Error> {
    for variant in VariantName::ALL {
        let mut cfg = load_config(common, variant)?;
        cfg.variant = variant.cell();
        cfg.stabilizers = variant.stabilizers();
        let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
        cfg.metrics_path = dir.join(format!("metrics-{}.csv", variant.as_str()));
        let out = run_experiment(&cfg, checkpoint_dir(common, variant.as_str()).as_deref())?;
        describe(variant.as_str(), &cfg, &out);
    }
    Ok(())
}

fn bench(common: &Common) -> Result<(), Error> {
    let (batch, hidden) = match common.preset {
        PresetArg::Desk => (8, 64),
        PresetArg::Paper => (32, 256),
    };
    let grid: Vec<BenchConfig> = [100, 200, 400, 800, 1600, 2000]
        .into_iter()
        .map(|steps| BenchConfig {
            steps,
            batch,
            hidden,
        })
        .collect();
    let opts = BenchOptions {
        seed: common.seed.unwrap_or(0),
        ..BenchOptions::default()
    };
    let table = benchmark(&grid, opts)?;
    print!("{}", table.summary());
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("bench.csv");
    table.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn check(common: &Common) -> Result<bool, Error> {
    let dir = match &common.out {
        Some(d) => d.clone(),
        None => std::env::temp_dir().join("ligru-check"),
    };
    std::fs::create_dir_all(&dir)?;
    let mut all = true;
    let mut report = |v: checks::Verdict| {
        println!("{v}");
        all &= v.passed;
    };
    report(checks::gradient_exactness()?);
    report(checks::theorem_bound()?);
    report(checks::eta_consistency()?);
    report(checks::desk_run(&dir)?);
    report(checks::instability(&dir)?);
    report(checks::fused_equivalence_and_scaling()?);
    report(checks::determinism(&dir)?);
    Ok(all)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a).map(|_| true),
        Command::Matrix(c) => matrix(c).map(|_| true),
        Command::Bench(c) => bench(c).map(|_| true),
        Command::Check(c) => check(c),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
