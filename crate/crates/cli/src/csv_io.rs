//! CSV ingestion. Numbers use a dot decimal separator regardless of locale;
//! empty cells and `NA` count as missing. Row numbers in errors are 1-based
//! and exclude the header.

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tsvc_core::model::PredictorInfo;
use tsvc_core::{Column, DataError, Dataset};

use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    ParseError { row: usize, column: String, value: String },
    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Raw CSV contents: header plus string records.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, LoadError> {
        let file = std::fs::File::open(path).map_err(|source| LoadError::Io { path: path.into(), source })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: io::Read>(reader: R) -> Result<Self, LoadError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = match rdr.headers() {
            Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
            Err(e) => return Err(LoadError::Csv(e.to_string())),
        };
        let headers = if headers.len() == 1 && headers[0].is_empty() { Vec::new() } else { headers };
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| LoadError::Csv(e.to_string()))?;
            records.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, records })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn numeric_column(&self, name: &str) -> Result<Vec<f64>, LoadError> {
        let k = self
            .column_index(name)
            .ok_or_else(|| LoadError::SchemaError(format!("column `{name}` not found in CSV header")))?;
        self.records
            .iter()
            .enumerate()
            .map(|(r, rec)| parse_cell(&rec[k], r + 1, name))
            .collect()
    }
}

pub fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64, LoadError> {
    let s = cell.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") {
        return Err(LoadError::MissingValue { row, column: column.into() });
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(LoadError::ParseError {
            row,
            column: column.into(),
            value: s.into(),
        }),
    }
}

/// Load `path` as typed data: schema predictors in schema order, plus the response.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset, LoadError> {
    dataset_from_table(&Table::read(path)?, schema)
}

pub fn dataset_from_table(table: &Table, schema: &Schema) -> Result<Dataset, LoadError> {
    let columns = schema
        .predictors()
        .map(|spec| Ok(Column::new(spec.name.clone(), table.numeric_column(&spec.name)?, spec.scale)))
        .collect::<Result<Vec<_>, LoadError>>()?;
    let response = table.numeric_column(&schema.response().name)?;
    Ok(Dataset::new(columns, response)?)
}

/// Covariate columns named by a fitted model, in the model's order.
pub fn covariates_from_table(table: &Table, predictors: &[PredictorInfo]) -> Result<Vec<Column>, LoadError> {
    predictors
        .iter()
        .map(|p| Ok(Column::new(p.name.clone(), table.numeric_column(&p.name)?, p.scale)))
        .collect()
}
