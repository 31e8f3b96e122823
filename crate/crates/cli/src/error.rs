use std::path::PathBuf;

use deskbayes::error::{DiagnosticsError, ModelError, SamplerError, ViError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad input file or an incompatible request.
    #[error("{0}")]
    Validation(String),
    /// The computation itself failed: divergence, underflow, no convergence.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Numeric(_) => 2,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diverged { .. } | ModelError::Autodiff(_) | ModelError::Linalg(_) => {
                CliError::Numeric(e.to_string())
            }
            ModelError::Config(_) | ModelError::Precondition(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) => CliError::Validation(e.to_string()),
            SamplerError::Model(m) => m.into(),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<ViError> for CliError {
    fn from(e: ViError) -> Self {
        match e {
            ViError::Config(_) | ViError::Precondition(_) => CliError::Validation(e.to_string()),
            ViError::Model(m) => m.into(),
            ViError::Sampler(s) => s.into(),
            ViError::Underflow { .. } | ViError::FitDiverged { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Precondition(_) => CliError::Validation(e.to_string()),
            DiagnosticsError::NoConvergence { .. } => CliError::Numeric(e.to_string()),
        }
    }
}
