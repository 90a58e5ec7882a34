//! Checkpoint directories.
//!
//! A checkpoint is a directory holding `manifest.txt` (one `key=value` per
//! line) and one binary matrix file per named weight, in the layout of
//! [`crate::linalg::write_matrix`]. Vectors are stored as `1 x n` matrices.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    Activation, BatchNormState, CellParams, FeedforwardNorm, RecurrentNorm, VariantConfig,
};
use crate::error::{Error, Result};
use crate::linalg::{read_matrix, write_matrix, Matrix};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub variant: VariantConfig,
    pub seed: u64,
    pub params: CellParams,
    /// Linear readout `1 x hidden`, if the model has one.
    pub readout: Option<Matrix>,
}

fn row(v: &[f64]) -> Matrix {
    Matrix::from_vec(1, v.len(), v.to_vec()).expect("row vector")
}

impl Checkpoint {
    fn weights(&self) -> Vec<(String, Matrix)> {
        let p = &self.params;
        let mut out: Vec<(String, Matrix)> =
            [("wz", &p.wz), ("wh", &p.wh), ("uz", &p.uz), ("uh", &p.uh)]
                .into_iter()
                .map(|(n, m)| (n.to_string(), m.clone()))
                .collect();
        for (prefix, bn) in [("bn_z", &p.bn_z), ("bn_h", &p.bn_h)] {
            out.push((format!("{prefix}_gamma"), row(&bn.gamma)));
            out.push((format!("{prefix}_beta"), row(&bn.beta)));
            out.push((format!("{prefix}_running_mean"), row(&bn.running_mean)));
            out.push((format!("{prefix}_running_var"), row(&bn.running_var)));
        }
        if let Some(r) = &self.readout {
            out.push(("readout".to_string(), r.clone()));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let v = &self.variant;
        let mut manifest = BufWriter::new(File::create(dir.join(MANIFEST))?);
        writeln!(manifest, "format=ligru-checkpoint-1")?;
        writeln!(manifest, "activation={}", enum_name(&v.activation))?;
        writeln!(manifest, "recurrent_norm={}", enum_name(&v.recurrent_norm))?;
        writeln!(
            manifest,
            "feedforward_norm={}",
            enum_name(&v.feedforward_norm)
        )?;
        writeln!(manifest, "input={}", self.params.input())?;
        writeln!(manifest, "hidden={}", self.params.hidden())?;
        writeln!(manifest, "seed={}", self.seed)?;
        writeln!(manifest, "bn_momentum={}", self.params.bn_z.momentum)?;
        writeln!(manifest, "bn_eps={}", self.params.bn_z.eps)?;
        let weights = self.weights();
        let names: Vec<&str> = weights.iter().map(|(n, _)| n.as_str()).collect();
        writeln!(manifest, "weights={}", names.join(","))?;
        manifest.flush()?;
        for (name, m) in weights {
            let mut w = BufWriter::new(File::create(dir.join(format!("{name}.bin")))?);
            write_matrix(&mut w, &m)?;
            w.flush()?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Checkpoint(format!("manifest line {}: expected key=value", n + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            kv.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Checkpoint(format!("manifest missing `{k}`")))
        };
        let parse_enum = |k: &str| -> Result<serde_json::Value> {
            Ok(serde_json::Value::String(get(k)?.to_string()))
        };
        let bad = |k: &str| Error::Checkpoint(format!("manifest has an invalid `{k}`"));
        let activation: Activation =
            serde_json::from_value(parse_enum("activation")?).map_err(|_| bad("activation"))?;
        let recurrent_norm: RecurrentNorm = serde_json::from_value(parse_enum("recurrent_norm")?)
            .map_err(|_| bad("recurrent_norm"))?;
        let feedforward_norm: FeedforwardNorm =
            serde_json::from_value(parse_enum("feedforward_norm")?)
                .map_err(|_| bad("feedforward_norm"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("seed"))?;
        let input: usize = get("input")?.parse().map_err(|_| bad("input"))?;
        let hidden: usize = get("hidden")?.parse().map_err(|_| bad("hidden"))?;
        let momentum: f64 = get("bn_momentum")?
            .parse()
            .map_err(|_| bad("bn_momentum"))?;
        let eps: f64 = get("bn_eps")?.parse().map_err(|_| bad("bn_eps"))?;
        let names: Vec<&str> = get("weights")?.split(',').collect();

        let read = |name: &str| -> Result<Matrix> {
            let mut r = BufReader::new(File::open(dir.join(format!("{name}.bin")))?);
            read_matrix(&mut r)
        };
        let vector = |name: &str| -> Result<Vec<f64>> {
            let m = read(name)?;
            if m.rows() != 1 || m.cols() != hidden {
                return Err(Error::Checkpoint(format!(
                    "{name} has shape {:?}",
                    m.shape()
                )));
            }
            Ok(m.into_vec())
        };
        let bn = |prefix: &str| -> Result<BatchNormState> {
            Ok(BatchNormState {
                gamma: vector(&format!("{prefix}_gamma"))?,
                beta: vector(&format!("{prefix}_beta"))?,
                running_mean: vector(&format!("{prefix}_running_mean"))?,
                running_var: vector(&format!("{prefix}_running_var"))?,
                momentum,
                eps,
            })
        };
        let params = CellParams {
            wz: read("wz")?,
            wh: read("wh")?,
            uz: read("uz")?,
            uh: read("uh")?,
            bn_z: bn("bn_z")?,
            bn_h: bn("bn_h")?,
        };
        params
            .validate()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if params.input() != input || params.hidden() != hidden {
            return Err(Error::Checkpoint(
                "weight shapes disagree with manifest".into(),
            ));
        }
        let readout = if names.contains(&"readout") {
            let r = read("readout")?;
            if r.shape() != (1, hidden) {
                return Err(Error::Checkpoint(format!(
                    "readout has shape {:?}",
                    r.shape()
                )));
            }
            Some(r)
        } else {
            None
        };
        Ok(Checkpoint {
            variant: VariantConfig {
                activation,
                recurrent_norm,
                feedforward_norm,
            },
            seed,
            params,
            readout,
        })
    }
}

fn enum_name<T: serde::Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        _ => unreachable!("unit enum variants serialize as strings"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = Rng::new(3);
        let mut params = CellParams::init(2, 5, &mut rng).unwrap();
        params.bn_h.running_var[2] = 0.125;
        let ck = Checkpoint {
            variant: VariantConfig::SINE,
            seed: 77,
            params,
            readout: Some(Matrix::from_fn(1, 5, |_, j| j as f64 * 0.1)),
        };
        ck.save(dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(manifest.contains("activation=sine\n"));
        assert!(manifest.contains("hidden=5\n"));
        assert!(manifest.contains("seed=77\n"));
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }

    #[test]
    fn missing_key_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            variant: VariantConfig::LIGRU,
            seed: 1,
            params: CellParams::zeros(1, 2),
            readout: None,
        };
        ck.save(dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap().replace("seed=1\n", "");
        fs::write(&path, text).unwrap();
        let err = Checkpoint::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");
    }
}
