//! JSON sidecar describing the columns of a CSV file.
//!
//! ```json
//! { "columns": [ { "name": "y", "role": "response", "scale": "binary" },
//!                { "name": "x", "role": "predictor", "scale": "continuous" } ] }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use tsvc_core::Scale;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Response,
    Predictor,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    #[serde(default = "default_scale")]
    pub scale: Scale,
}

fn default_scale() -> Scale {
    Scale::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let schema: Schema = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: invalid schema: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let responses = self.columns.iter().filter(|c| c.role == Role::Response).count();
        if responses != 1 {
            return Err(CliError::Data(format!("schema needs exactly one response column, found {responses}")));
        }
        for (k, c) in self.columns.iter().enumerate() {
            if self.columns[..k].iter().any(|o| o.name == c.name) {
                return Err(CliError::Data(format!("schema lists column `{}` twice", c.name)));
            }
        }
        Ok(())
    }

    pub fn response(&self) -> &ColumnSpec {
        self.columns.iter().find(|c| c.role == Role::Response).expect("validated")
    }

    pub fn predictors(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.role == Role::Predictor)
    }
}
