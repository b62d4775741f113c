//! Versioned JSON container for fitted models.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tsvc_core::{FitConfig, TsvcModel};

use crate::error::CliError;

pub const SCHEMA_VERSION: &str = "tsvc-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    pub seed: u64,
    pub config: FitConfig,
    pub model: TsvcModel,
}

impl ModelFile {
    pub fn new(config: FitConfig, model: TsvcModel) -> Self {
        Self {
            schema: SCHEMA_VERSION.into(),
            seed: config.seed,
            config,
            model,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| CliError::Data(format!("invalid model file: {e}")))?;
        if file.schema != SCHEMA_VERSION {
            return Err(CliError::Data(format!("unsupported model schema `{}` (expected `{SCHEMA_VERSION}`)", file.schema)));
        }
        file.model.check_invariants()?;
        Ok(file)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&std::fs::read_to_string(path).map_err(CliError::io(path))?)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(CliError::io(path))
    }
}
