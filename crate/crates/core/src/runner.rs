//! Experiment configuration and the adding-task training loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};

use crate::adding_task::generate;
use crate::backprop::clip_global_norm;
use crate::cells::checkpoint::Checkpoint;
use crate::cells::VariantConfig;
use crate::diagnostics::{
    detect_explosion, ExplosionPoint, Observation, ObservationKind, SpectralMonitor,
    StabilityReport,
};
use crate::error::{Error, Result};
use crate::linalg::Rng;
use crate::model::Model;
use crate::optimizer::{adam_step, AdamState};
use crate::stabilizers::{apply_weight_decay, sor_penalty, StabilizerConfig};
use crate::tensors::Tensors;

pub const METRICS_HEADER: &str = "epoch,mse,eta,gamma1,uz_norm,uh_norm,grad_ratio,exploded";

/// RNG streams derived from the experiment seed.
const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

/// The five runs of the variant matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Ligru,
    Sligru,
    Sine,
    GcWd,
    Sor,
}

impl VariantName {
    pub const ALL: [VariantName; 5] = [
        VariantName::Ligru,
        VariantName::Sligru,
        VariantName::Sine,
        VariantName::GcWd,
        VariantName::Sor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Ligru => "ligru",
            VariantName::Sligru => "sligru",
            VariantName::Sine => "sine",
            VariantName::GcWd => "gc-wd",
            VariantName::Sor => "sor",
        }
    }

    pub fn cell(self) -> VariantConfig {
        match self {
            VariantName::Sligru => VariantConfig::SLIGRU,
            VariantName::Sine => VariantConfig::SINE,
            VariantName::Ligru | VariantName::GcWd | VariantName::Sor => VariantConfig::LIGRU,
        }
    }

    pub fn stabilizers(self) -> StabilizerConfig {
        match self {
            VariantName::GcWd => StabilizerConfig {
                weight_decay: 0.001,
                clip_threshold: Some(1.0),
                ..StabilizerConfig::NONE
            },
            VariantName::Sor => StabilizerConfig {
                sor_lambda: 0.001,
                ..StabilizerConfig::NONE
            },
            _ => StabilizerConfig::NONE,
        }
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?}; expected ligru, sligru, sine, gc-wd or sor"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            _ => Err(Error::Config(format!(
                "unknown preset {s:?}; expected paper or desk"
            ))),
        }
    }
}

/// `variant` in a config file is either a name (`"sligru"`) or the explicit
/// `{activation, recurrent_norm, feedforward_norm}` object.
fn variant_from_json<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<VariantConfig, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Spec {
        Name(String),
        Explicit(VariantConfig),
    }
    match Spec::deserialize(d)? {
        Spec::Explicit(v) => Ok(v),
        Spec::Name(n) => match n.as_str() {
            "ligru" => Ok(VariantConfig::LIGRU),
            "sligru" => Ok(VariantConfig::SLIGRU),
            "sine" => Ok(VariantConfig::SINE),
            _ => Err(serde::de::Error::custom(format!(
                "unknown variant {n:?}; expected ligru, sligru, sine or an explicit object"
            ))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(deserialize_with = "variant_from_json")]
    pub variant: VariantConfig,
    #[serde(default)]
    pub stabilizers: StabilizerConfig,
    #[serde(rename = "T", alias = "seq_len")]
    pub steps: usize,
    pub hidden: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub metrics_path: PathBuf,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset, variant: VariantName) -> Self {
        let (steps, hidden, batch, epochs) = match preset {
            Preset::Paper => (2000, 1024, 256, 1000),
            Preset::Desk => (200, 64, 64, 300),
        };
        ExperimentConfig {
            variant: variant.cell(),
            stabilizers: variant.stabilizers(),
            steps,
            hidden,
            batch,
            epochs,
            lr: 0.001,
            seed: 1,
            metrics_path: PathBuf::from(format!("metrics-{}.csv", variant.as_str())),
        }
    }

    /// Parses a JSON config. Errors carry the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.stabilizers.validate()?;
        if self.steps < 2 || !self.steps.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "T must be even and >= 2, got {}",
                self.steps
            )));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be >= 1".into()));
        }
        if self.batch < 2 && self.variant.uses_batch_norm() {
            return Err(Error::Config("batch norm needs batch >= 2".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Report of the last completed epoch (epoch 0: initial weights).
    pub report: StabilityReport,
    pub epochs_completed: usize,
    pub exploded_at: Option<ExplosionPoint>,
    pub model: Model,
}

fn write_row<W: Write>(w: &mut W, r: &StabilityReport, exploded: bool) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{}",
        r.epoch,
        r.mse,
        r.eta,
        r.gamma1,
        r.norm_uz,
        r.norm_uh,
        r.max_adjacent_grad_ratio,
        u8::from(exploded)
    )?;
    Ok(())
}

/// Trains the configured variant on fresh adding-task batches, writing one
/// metrics row per epoch.
///
/// A numerical explosion ends the run early with a final row flagged
/// `exploded = 1`; that is a normal outcome, not an error. When
/// `checkpoint_dir` is given the final weights are saved there.
pub fn run_experiment(cfg: &ExperimentConfig, checkpoint_dir: Option<&Path>) -> Result<RunOutcome> {
    run_experiment_with(cfg, checkpoint_dir, |_, _| true)
}

/// [`run_experiment`] with a callback invoked after every written row with
/// the report and its exploded flag. Returning `false` ends the run after
/// that epoch.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    checkpoint_dir: Option<&Path>,
    on_epoch: impl FnMut(&StabilityReport, bool) -> bool,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(dir) = cfg
        .metrics_path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
    {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(File::create(&cfg.metrics_path)?);
    let outcome = train(cfg, &mut out, on_epoch)?;
    out.flush()?;
    if let Some(dir) = checkpoint_dir {
        Checkpoint {
            variant: cfg.variant,
            seed: cfg.seed,
            params: outcome.model.cell.clone(),
            readout: Some(outcome.model.readout.clone()),
        }
        .save(dir)?;
    }
    Ok(outcome)
}

/// The training loop behind [`run_experiment_with`], writing the metrics CSV
/// to `out`. `cfg.metrics_path` is not used.
pub fn train<W: Write>(
    cfg: &ExperimentConfig,
    out: &mut W,
    mut on_epoch: impl FnMut(&StabilityReport, bool) -> bool,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut init_rng = Rng::with_stream(cfg.seed, INIT_STREAM);
    let mut data_rng = Rng::with_stream(cfg.seed, DATA_STREAM);
    let mut model = Model::init(2, cfg.hidden, &mut init_rng)?;
    let mut adam = AdamState::new(&model, cfg.lr);
    let mut monitor = SpectralMonitor::new();
    let stab = cfg.stabilizers;
    writeln!(out, "{METRICS_HEADER}")?;

    let mut exploded_at = None;
    let mut epochs_completed = 0;
    let mut last_report = None;

    for epoch in 1..=cfg.epochs {
        let batch = generate(cfg.steps, cfg.batch, &mut data_rng)?;
        let step = match model.loss_and_grads(&cfg.variant, &batch) {
            Ok(s) => s,
            Err(Error::Explosion { timestep, .. }) => {
                exploded_at = Some(ExplosionPoint { epoch, timestep });
                let (nz, nh) = monitor.norms(&model.cell.uz, &model.cell.uh);
                let row = StabilityReport {
                    epoch,
                    variant: cfg.variant,
                    eta: f64::NAN,
                    gamma1: f64::NAN,
                    norm_uz: nz,
                    norm_uh: nh,
                    sigma_z: None,
                    sigma_h: None,
                    mse: f64::NAN,
                    exploded_at,
                    max_adjacent_grad_ratio: f64::NAN,
                };
                write_row(out, &row, true)?;
                on_epoch(&row, true);
                last_report = Some(row);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut grads = step.grads;
        let mut report = StabilityReport::from_trace(
            epoch,
            &step.trace,
            &model.cell.uz,
            &model.cell.uh,
            &mut monitor,
            step.mse,
            &grads.cell.state_norms_with_initial(),
        )?;

        if stab.sor_lambda > 0.0 {
            let pen = sor_penalty(&model.cell.uz, &model.cell.uh, stab.sor_lambda)?;
            grads.cell.uz.add_scaled(&pen.d_uz, 1.0)?;
            grads.cell.uh.add_scaled(&pen.d_uh, 1.0)?;
        }

        let mut flat = Vec::with_capacity(grads.num_values());
        grads
            .tensors()
            .iter()
            .for_each(|t| flat.extend_from_slice(t));
        let observations = [
            Observation {
                epoch,
                timestep: None,
                kind: ObservationKind::Loss,
                values: &[step.mse],
            },
            Observation {
                epoch,
                timestep: None,
                kind: ObservationKind::Gradient,
                values: &flat,
            },
        ];
        let mut explosion = detect_explosion(observations);
        if explosion.is_none() {
            if let Some(threshold) = stab.clip_threshold {
                if let Err(e) = clip_global_norm(&mut grads, threshold) {
                    if !e.is_explosion() {
                        return Err(e);
                    }
                    explosion = Some(ExplosionPoint {
                        epoch,
                        timestep: None,
                    });
                }
            }
        }
        if let Some(point) = explosion {
            report.exploded_at = Some(point);
            exploded_at = Some(point);
            write_row(out, &report, true)?;
            on_epoch(&report, true);
            last_report = Some(report);
            break;
        }

        apply_weight_decay(&mut model.cell, stab.weight_decay, cfg.lr);
        adam_step(&mut model, &grads, &mut adam)?;
        model.cell.absorb_batch_stats(&step.trace);

        write_row(out, &report, false)?;
        epochs_completed = epoch;
        let go_on = on_epoch(&report, false);
        last_report = Some(report);
        if !go_on {
            break;
        }
    }
    let report = match last_report {
        Some(r) => r,
        None => initial_report(cfg, &model, &mut monitor)?,
    };
    Ok(RunOutcome {
        report,
        epochs_completed,
        exploded_at,
        model,
    })
}

/// Report for untrained weights on one batch drawn from a separate stream.
fn initial_report(
    cfg: &ExperimentConfig,
    model: &Model,
    monitor: &mut SpectralMonitor,
) -> Result<StabilityReport> {
    let mut rng = Rng::with_stream(cfg.seed, DATA_STREAM);
    let batch = generate(cfg.steps, cfg.batch, &mut rng)?;
    let step = model.loss_and_grads(&cfg.variant, &batch)?;
    StabilityReport::from_trace(
        0,
        &step.trace,
        &model.cell.uz,
        &model.cell.uh,
        monitor,
        step.mse,
        &step.grads.cell.state_norms_with_initial(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path, variant: VariantName, epochs: usize) -> ExperimentConfig {
        ExperimentConfig {
            steps: 10,
            hidden: 6,
            batch: 4,
            epochs,
            metrics_path: dir.join("m.csv"),
            ..ExperimentConfig::preset(Preset::Desk, variant)
        }
    }

    #[test]
    fn zero_epochs_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), VariantName::Sligru, 0);
        let out = run_experiment(&cfg, None).unwrap();
        assert_eq!(
            std::fs::read_to_string(&cfg.metrics_path).unwrap(),
            format!("{METRICS_HEADER}\n")
        );
        assert_eq!(out.report.epoch, 0);
        assert_eq!(out.epochs_completed, 0);
        assert!(out.report.eta.is_finite());
    }

    #[test]
    fn row_count_matches_epochs() {
        let dir = tempfile::tempdir().unwrap();
        for v in VariantName::ALL {
            let cfg = tiny(dir.path(), v, 5);
            let out = run_experiment(&cfg, None).unwrap();
            let text = std::fs::read_to_string(&cfg.metrics_path).unwrap();
            assert_eq!(text.lines().count(), 1 + out.epochs_completed);
            assert_eq!(out.epochs_completed, 5);
        }
    }

    #[test]
    fn explosion_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(dir.path(), VariantName::Ligru, 50);
        cfg.lr = 1e12;
        cfg.variant = cfg
            .variant
            .with_feedforward_norm(crate::cells::FeedforwardNorm::None);
        let out = run_experiment(&cfg, None).unwrap();
        let point = out.exploded_at.expect("explodes");
        let text = std::fs::read_to_string(&cfg.metrics_path).unwrap();
        let last = text.lines().last().unwrap();
        assert!(last.ends_with(",1"));
        assert!(last.starts_with(&format!("{},", point.epoch)));
        assert_eq!(text.lines().count(), 1 + point.epoch);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path(), VariantName::Sine, 2);
        let ck = dir.path().join("ck");
        let out = run_experiment(&cfg, Some(&ck)).unwrap();
        let loaded = Checkpoint::load(&ck).unwrap();
        assert_eq!(loaded.params, out.model.cell);
        assert_eq!(loaded.readout.as_ref(), Some(&out.model.readout));
    }

    #[test]
    fn shipped_configs_match_presets() {
        let sligru =
            ExperimentConfig::from_json(include_str!("../../../configs/desk-sligru.json")).unwrap();
        assert_eq!(
            sligru,
            ExperimentConfig::preset(Preset::Desk, VariantName::Sligru)
        );
        let gcwd =
            ExperimentConfig::from_json(include_str!("../../../configs/desk-gc-wd.json")).unwrap();
        assert_eq!(
            gcwd,
            ExperimentConfig::preset(Preset::Desk, VariantName::GcWd)
        );
    }

    #[test]
    fn config_parsing() {
        let text = r#"{"variant": "sligru", "T": 20, "hidden": 8, "batch": 4, "epochs": 3,
                       "lr": 0.001, "seed": 7, "metrics_path": "out.csv"}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.variant, VariantConfig::SLIGRU);
        assert_eq!(cfg.stabilizers, StabilizerConfig::NONE);

        let explicit = r#"{"variant": {"activation": "sine", "recurrent_norm": "layer_norm", "feedforward_norm": "none"},
            "stabilizers": {"clip_threshold": 1.0}, "seq_len": 20, "hidden": 8, "batch": 4, "epochs": 3,
            "lr": 0.001, "seed": 7, "metrics_path": "out.csv"}"#;
        let cfg = ExperimentConfig::from_json(explicit).unwrap();
        assert_eq!(cfg.stabilizers.clip_threshold, Some(1.0));
        assert_eq!(cfg.steps, 20);

        let missing = "{\"variant\": \"sligru\",\n \"T\": 20}";
        let err = ExperimentConfig::from_json(missing)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(ExperimentConfig::from_json("{\"variant\": \"lstm\"}").is_err());
        assert!(ExperimentConfig::from_json(&text.replace("\"T\": 20", "\"T\": 21")).is_err());
    }

    #[test]
    fn variant_names() {
        for v in VariantName::ALL {
            assert_eq!(v.as_str().parse::<VariantName>().unwrap(), v);
        }
        assert!("gru".parse::<VariantName>().is_err());
        let p = ExperimentConfig::preset(Preset::Paper, VariantName::GcWd);
        assert_eq!(
            (p.steps, p.hidden, p.batch, p.epochs),
            (2000, 1024, 256, 1000)
        );
        assert_eq!(p.stabilizers.weight_decay, 0.001);
        assert_eq!(p.stabilizers.clip_threshold, Some(1.0));
        assert_eq!(
            ExperimentConfig::preset(Preset::Desk, VariantName::Sor)
                .stabilizers
                .sor_lambda,
            0.001
        );
    }
}
