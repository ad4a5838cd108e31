use std::path::Path;

use gafvit::clustering::ClusterError;
use gafvit::data::DataError;
use gafvit::engine::EngineError;
use gafvit::gaf::GafError;
use gafvit::metrics::MetricsError;
use gafvit::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<GafError> for CliError {
    fn from(e: GafError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::InvalidThreshold(_) | ClusterError::InvalidGrid(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::NonFiniteLoss { .. } | EngineError::NonFiniteGradient(_) => Self::Numeric(e.to_string()),
            EngineError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Engine(e) => e.into(),
            ModelError::Vit(_) | ModelError::Attention(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}
