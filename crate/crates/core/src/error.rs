use std::io;

use thiserror::Error;

/// Where a non-finite value was first seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Forward,
    Loss,
    Backward,
    Clip,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Stage::Forward => "forward",
            Stage::Loss => "loss",
            Stage::Backward => "backward",
            Stage::Clip => "clip",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite (or runaway) value appeared. This is an experimental
    /// outcome rather than a bug; the runner records it and stops the run.
    #[error("numerical explosion during {stage}{}", .timestep.map(|t| format!(" at timestep {t}")).unwrap_or_default())]
    Explosion {
        stage: Stage,
        timestep: Option<usize>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn is_explosion(&self) -> bool {
        matches!(self, Error::Explosion { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
