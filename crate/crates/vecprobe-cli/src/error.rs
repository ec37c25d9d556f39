//! Exit-code classification for everything a command can fail with.
//!
//! Three buckets map straight onto process exit codes: bad configuration
//! (2), unreadable or inconsistent data (3), and numeric failure inside
//! the math (4). Library errors are folded into a bucket by what caused
//! them, not where they surfaced, so a non-finite value raised deep in a
//! batched training step still exits 4.

use thiserror::Error;
use vecprobe::attribution::AttributionError;
use vecprobe::grad::GradError;
use vecprobe::ingest::IngestError;
use vecprobe::metrics::EvalError;
use vecprobe::model::ModelError;
use vecprobe::scene::SceneError;
use vecprobe::synth::SynthError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<GradError> for CliError {
    fn from(e: GradError) -> Self {
        match e {
            GradError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::BadTestFraction(_) => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::BadHyperParams(_) => CliError::Config(e.to_string()),
            ModelError::Grad(g) => g.into(),
            ModelError::Batch { ref source, .. } => match source {
                GradError::NonFinite { .. } => CliError::Numeric(e.to_string()),
                _ => CliError::Data(e.to_string()),
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AttributionError> for CliError {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::BadSpec(_) => CliError::Config(e.to_string()),
            AttributionError::Step { ref source, .. } => match source {
                GradError::NonFinite { .. } => CliError::Numeric(e.to_string()),
                _ => CliError::Data(e.to_string()),
            },
            AttributionError::Grad(g) => g.into(),
            AttributionError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec(_) => CliError::Config(e.to_string()),
            SynthError::Scene(s) => s.into(),
        }
    }
}
