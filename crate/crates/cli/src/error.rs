use std::io;
use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;
use tsvc_core::algorithm::FitError;
use tsvc_core::model::ModelError;
use tsvc_core::sim::SimError;
use tsvc_core::{DataError, GlmError};

use crate::csv_io::LoadError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// One-line machine-readable description for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            error: &'a str,
            message: String,
            exit_code: i32,
        }
        serde_json::to_string(&Report {
            error: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
        })
        .expect("plain struct serializes")
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Glm(GlmError::InvalidResponse { .. } | GlmError::DimensionMismatch { .. } | GlmError::Underdetermined { .. }) => CliError::Data(e.to_string()),
            ModelError::Glm(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            FitError::Data(_) | FitError::DegenerateData(_) => CliError::Data(e.to_string()),
            FitError::Model(m) => m.into(),
            FitError::Split(_) | FitError::Permutation(_) => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Fit(f) => f.into(),
            SimError::UnknownScenario(_) | SimError::InvalidSpec(_) => CliError::Usage(e.to_string()),
            SimError::LengthMismatch { .. } => CliError::Data(e.to_string()),
        }
    }
}
