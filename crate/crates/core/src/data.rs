//! Observation data and threshold regions.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Measurement scale of a covariate. Nominal factors must be expanded into
/// binary dummies by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Continuous,
    Ordinal,
    Binary,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Continuous => "continuous",
            Scale::Ordinal => "ordinal",
            Scale::Binary => "binary",
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" | "metric" => Ok(Scale::Continuous),
            "ordinal" => Ok(Scale::Ordinal),
            "binary" => Ok(Scale::Binary),
            _ => Err(DataError::UnknownScale(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
    pub scale: Scale,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>, scale: Scale) -> Self {
        Self {
            name: name.into(),
            values,
            scale,
        }
    }

    pub fn continuous(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(name, values, Scale::Continuous)
    }

    pub fn binary(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self::new(name, values, Scale::Binary)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("dataset has no observations")]
    Empty,
    #[error("column `{column}` has {found} values, expected {expected}")]
    LengthMismatch { column: String, expected: usize, found: usize },
    #[error("binary column `{column}` has value {value} at row {row}")]
    NonBinary { column: String, row: usize, value: f64 },
    #[error("non-finite value in `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("duplicate column name `{0}`")]
    DuplicateName(String),
    #[error("covariate index {index} out of range (p = {p})")]
    InvalidIndex { index: usize, p: usize },
    #[error("unknown scale `{0}`")]
    UnknownScale(String),
    #[error("region repeats the split ({modifier}, {split_point})")]
    DuplicateBranch { modifier: usize, split_point: f64 },
    #[error("split point must be finite")]
    NonFiniteSplit,
}

/// Column-oriented covariates plus a response. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    response: Vec<f64>,
}

impl Dataset {
    pub fn new(columns: Vec<Column>, response: Vec<f64>) -> Result<Self, DataError> {
        let n = response.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { column: "response".into(), row });
        }
        validate_columns(&columns, n)?;
        Ok(Self { columns, response })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.response.len()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    #[inline]
    pub fn values(&self, j: usize) -> &[f64] {
        &self.columns[j].values
    }

    pub fn scale(&self, j: usize) -> Scale {
        self.columns[j].scale
    }

    pub fn name(&self, j: usize) -> &str {
        &self.columns[j].name
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn check_index(&self, j: usize) -> Result<(), DataError> {
        if j < self.p() {
            Ok(())
        } else {
            Err(DataError::InvalidIndex { index: j, p: self.p() })
        }
    }

    /// Copy with column `j` replaced.
    pub fn with_column_values(&self, j: usize, values: Vec<f64>) -> Result<Self, DataError> {
        self.check_index(j)?;
        let mut columns = self.columns.clone();
        columns[j].values = values;
        Self::new(columns, self.response.clone())
    }

    /// Copy with rows reordered: row `i` of the result is row `order[i]` of `self`.
    pub fn select_rows(&self, order: &[usize]) -> Result<Self, DataError> {
        let columns = self
            .columns
            .iter()
            .map(|c| Column::new(c.name.clone(), order.iter().map(|&i| c.values[i]).collect(), c.scale))
            .collect();
        Self::new(columns, order.iter().map(|&i| self.response[i]).collect())
    }
}

/// Checks the covariate invariants shared by training and prediction data.
pub fn validate_columns(columns: &[Column], n: usize) -> Result<(), DataError> {
    for (k, c) in columns.iter().enumerate() {
        if c.values.len() != n {
            return Err(DataError::LengthMismatch {
                column: c.name.clone(),
                expected: n,
                found: c.values.len(),
            });
        }
        if columns[..k].iter().any(|o| o.name == c.name) {
            return Err(DataError::DuplicateName(c.name.clone()));
        }
        for (row, &v) in c.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(DataError::NonFinite { column: c.name.clone(), row });
            }
            if c.scale == Scale::Binary && v != 0.0 && v != 1.0 {
                return Err(DataError::NonBinary {
                    column: c.name.clone(),
                    row,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// `x <= c`
    Le,
    /// `x > c`
    Gt,
}

/// One threshold condition on a modifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub modifier: usize,
    pub split_point: f64,
    pub side: Side,
}

impl Branch {
    #[inline]
    pub fn holds(&self, x: f64) -> bool {
        match self.side {
            Side::Le => x <= self.split_point,
            Side::Gt => x > self.split_point,
        }
    }
}

/// Conjunction of branch conditions; the empty region holds every row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Region {
    branches: Vec<Branch>,
}

impl Region {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn from_branches(branches: Vec<Branch>) -> Result<Self, DataError> {
        let mut r = Self::all();
        for b in branches {
            r.push(b)?;
        }
        Ok(r)
    }

    pub fn push(&mut self, branch: Branch) -> Result<(), DataError> {
        if !branch.split_point.is_finite() {
            return Err(DataError::NonFiniteSplit);
        }
        if self
            .branches
            .iter()
            .any(|b| b.modifier == branch.modifier && b.split_point == branch.split_point)
        {
            return Err(DataError::DuplicateBranch {
                modifier: branch.modifier,
                split_point: branch.split_point,
            });
        }
        self.branches.push(branch);
        Ok(())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Membership of one row, with covariates supplied by index.
    #[inline]
    pub fn contains<F: Fn(usize) -> f64>(&self, x: F) -> bool {
        self.branches.iter().all(|b| b.holds(x(b.modifier)))
    }
}

/// Row membership of `region` in `data`.
pub fn region_indicator(region: &Region, data: &Dataset) -> Result<Vec<bool>, DataError> {
    region_indicator_columns(region, data.columns(), data.n())
}

pub(crate) fn region_indicator_columns(region: &Region, columns: &[Column], n: usize) -> Result<Vec<bool>, DataError> {
    let mut out = vec![true; n];
    for b in region.branches() {
        let col = columns.get(b.modifier).ok_or(DataError::InvalidIndex {
            index: b.modifier,
            p: columns.len(),
        })?;
        if !b.split_point.is_finite() {
            return Err(DataError::NonFiniteSplit);
        }
        for (o, &v) in out.iter_mut().zip(&col.values) {
            *o = *o && b.holds(v);
        }
    }
    Ok(out)
}
