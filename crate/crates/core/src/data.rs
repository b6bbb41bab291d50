//! Observation tables: column typing, validation, CSV ingestion and output.
//!
//! A [`Dataset`] owns a binary exposure, a numeric outcome (tagged binary or
//! continuous) and an ordered list of named numeric covariate columns. The
//! intercept is implicit and never stored. Validation is strict at load time:
//! complete cases only, exposure in {0,1} with both arms present, and no
//! covariate exactly collinear with the rest of the design.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::glm::linalg;

/// Relative singular-value ratio below which the covariate matrix (with
/// intercept) is declared exactly collinear.
const COLLINEARITY_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column {0:?} not found in CSV header")]
    MissingColumn(String),
    #[error("exposure column contains non-binary value {value} (row {row})")]
    NonBinaryExposure { value: f64, row: usize },
    #[error("exposure column must contain both 0 and 1")]
    DegenerateExposure,
    #[error("binary outcome column contains non-binary value {value} (row {row})")]
    NonBinaryOutcome { value: f64, row: usize },
    #[error("covariate {0:?} is constant or exactly collinear with the other columns; drop or re-specify it")]
    DegenerateColumn(String),
    #[error("missing or unparseable value in column {column:?} (row {row}); rerun with drop_incomplete to remove such rows")]
    MissingValue { column: String, row: usize },
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("at least one covariate is required")]
    NoCovariates,
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("invalid column specs: {0}")]
    SpecInvalid(String),
    #[error("record {row} has {actual} values but the schema has {expected} columns")]
    SchemaMismatch { row: usize, expected: usize, actual: usize },
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV failure: {0}")]
    Csv(#[from] csv::Error),
}

/// Whether the outcome is Bernoulli or continuous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Binary => write!(f, "binary"),
            OutcomeKind::Continuous => write!(f, "continuous"),
        }
    }
}

/// Role of a CSV column in a load request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRole {
    Exposure,
    Outcome,
    Covariate,
    Ignore,
}

/// Binding of a CSV header name to its role.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
    /// Outcome coding; inferred from the data when absent.
    pub outcome_kind: Option<OutcomeKind>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, role: ColumnRole) -> Self {
        Self { name: name.into(), role, outcome_kind: None }
    }
}

/// One named covariate column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// Immutable observation table. Safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    exposure: Vec<f64>,
    outcome: Vec<f64>,
    outcome_kind: OutcomeKind,
    covariates: Vec<Column>,
}

impl Dataset {
    /// Build a dataset, enforcing every structural invariant.
    pub fn new(
        exposure: Vec<f64>,
        outcome: Vec<f64>,
        outcome_kind: OutcomeKind,
        covariates: Vec<Column>,
    ) -> Result<Self, DataError> {
        let n = exposure.len();
        if outcome.len() != n {
            return Err(DataError::SchemaMismatch { row: 0, expected: n, actual: outcome.len() });
        }
        if covariates.is_empty() {
            return Err(DataError::NoCovariates);
        }
        for c in &covariates {
            if c.values.len() != n {
                return Err(DataError::SchemaMismatch {
                    row: 0,
                    expected: n,
                    actual: c.values.len(),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for c in &covariates {
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::DuplicateColumn(c.name.clone()));
            }
        }
        let mut saw_zero = false;
        let mut saw_one = false;
        for (row, a) in exposure.iter().enumerate() {
            if *a == 0.0 {
                saw_zero = true;
            } else if *a == 1.0 {
                saw_one = true;
            } else {
                return Err(DataError::NonBinaryExposure { value: *a, row: row + 1 });
            }
        }
        if !(saw_zero && saw_one) {
            return Err(DataError::DegenerateExposure);
        }
        if outcome_kind == OutcomeKind::Binary {
            for (row, y) in outcome.iter().enumerate() {
                if *y != 0.0 && *y != 1.0 {
                    return Err(DataError::NonBinaryOutcome { value: *y, row: row + 1 });
                }
            }
        }
        check_collinearity(n, &covariates)?;
        Ok(Self { exposure, outcome, outcome_kind, covariates })
    }

    pub fn n(&self) -> usize {
        self.exposure.len()
    }

    /// Number of covariates J.
    pub fn n_covariates(&self) -> usize {
        self.covariates.len()
    }

    pub fn exposure(&self) -> &[f64] {
        &self.exposure
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn covariates(&self) -> &[Column] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> Vec<&str> {
        self.covariates.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariates.iter().position(|c| c.name == name)
    }

    pub fn covariate(&self, index: usize) -> &Column {
        &self.covariates[index]
    }

    /// New dataset keeping only the named covariates, in the order given.
    pub fn restrict(&self, names: &[&str]) -> Result<Dataset, DataError> {
        let mut kept = Vec::with_capacity(names.len());
        for name in names {
            let idx = self
                .covariate_index(name)
                .ok_or_else(|| DataError::UnknownCovariate((*name).to_string()))?;
            kept.push(self.covariates[idx].clone());
        }
        Dataset::new(self.exposure.clone(), self.outcome.clone(), self.outcome_kind, kept)
    }

    /// New dataset from the given row indices (duplicates permitted).
    pub fn sample_rows(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        let gather = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let covariates = self
            .covariates
            .iter()
            .map(|c| Column { name: c.name.clone(), values: gather(&c.values) })
            .collect();
        Dataset::new(gather(&self.exposure), gather(&self.outcome), self.outcome_kind, covariates)
    }
}

/// Rank check of [1 | covariates], each column scaled to unit Euclidean norm:
/// the smallest-to-largest singular value ratio must stay above
/// [`COLLINEARITY_TOL`].
fn check_collinearity(n: usize, covariates: &[Column]) -> Result<(), DataError> {
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(covariates.len() + 1);
    columns.push(vec![1.0 / (n as f64).sqrt(); n]);
    for c in covariates {
        let norm = c.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(DataError::DegenerateColumn(c.name.clone()));
        }
        columns.push(c.values.iter().map(|v| v / norm).collect());
    }
    let singular = linalg::singular_values_columns(&mut columns.clone());
    let sigma_max = singular.iter().copied().fold(0.0_f64, f64::max);
    let sigma_min = singular.iter().copied().fold(f64::INFINITY, f64::min);
    if sigma_max > 0.0 && sigma_min / sigma_max >= COLLINEARITY_TOL {
        return Ok(());
    }
    // Attribute the failure: modified Gram-Schmidt residual norms identify
    // the first column (nearly) dependent on its predecessors.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut culprit = covariates.len() - 1;
    let mut smallest = f64::INFINITY;
    for (k, column) in columns.iter().enumerate() {
        let mut v = column.clone();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= d * bi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if k > 0 {
            if norm < 1e-8 {
                culprit = k - 1;
                break;
            }
            if norm < smallest {
                smallest = norm;
                culprit = k - 1;
            }
        }
        if norm > 0.0 {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    Err(DataError::DegenerateColumn(covariates[culprit].name.clone()))
}

/// A loaded dataset plus the complete-case bookkeeping.
#[derive(Debug)]
pub struct LoadedData {
    pub dataset: Dataset,
    /// Rows removed because a non-ignored cell was missing or unparseable.
    pub dropped_rows: usize,
}

fn parse_cell(raw: &str) -> Option<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "NA" || trimmed == "NaN" {
        return None;
    }
    match f64::from_str(trimmed) {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

/// Load a CSV (RFC-4180-style, header row, UTF-8) under the given specs.
///
/// Only columns named in `specs` are read; with `drop_incomplete`, rows with
/// a missing or unparseable cell in any non-ignored column are removed,
/// otherwise such a cell is an error.
pub fn load_csv(
    path: impl AsRef<Path>,
    specs: &[ColumnSpec],
    drop_incomplete: bool,
) -> Result<LoadedData, DataError> {
    let mut exposure_specs = specs.iter().filter(|s| s.role == ColumnRole::Exposure);
    let exposure_spec = exposure_specs
        .next()
        .ok_or_else(|| DataError::SpecInvalid("exactly one exposure column is required".into()))?;
    if exposure_specs.next().is_some() {
        return Err(DataError::SpecInvalid("exactly one exposure column is required".into()));
    }
    let mut outcome_specs = specs.iter().filter(|s| s.role == ColumnRole::Outcome);
    let outcome_spec = outcome_specs
        .next()
        .ok_or_else(|| DataError::SpecInvalid("exactly one outcome column is required".into()))?;
    if outcome_specs.next().is_some() {
        return Err(DataError::SpecInvalid("exactly one outcome column is required".into()));
    }

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };

    let exposure_idx = column_index(&exposure_spec.name)?;
    let outcome_idx = column_index(&outcome_spec.name)?;
    let covariate_specs: Vec<&ColumnSpec> =
        specs.iter().filter(|s| s.role == ColumnRole::Covariate).collect();
    let mut covariate_idx = Vec::with_capacity(covariate_specs.len());
    for spec in &covariate_specs {
        covariate_idx.push(column_index(&spec.name)?);
    }

    let mut exposure = Vec::new();
    let mut outcome = Vec::new();
    let mut covariate_cols: Vec<Vec<f64>> = vec![Vec::new(); covariate_specs.len()];
    let mut dropped_rows = 0usize;

    for (row_number, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_number + 1;
        let mut parsed = Vec::with_capacity(2 + covariate_idx.len());
        let mut missing: Option<String> = None;
        for (name, idx) in std::iter::once((exposure_spec.name.as_str(), exposure_idx))
            .chain(std::iter::once((outcome_spec.name.as_str(), outcome_idx)))
            .chain(covariate_specs.iter().map(|s| s.name.as_str()).zip(covariate_idx.iter().copied()))
        {
            let raw = record.get(idx).unwrap_or("");
            match parse_cell(raw) {
                Some(v) => parsed.push(v),
                None => {
                    missing = Some(name.to_string());
                    break;
                }
            }
        }
        if let Some(column) = missing {
            if drop_incomplete {
                dropped_rows += 1;
                continue;
            }
            return Err(DataError::MissingValue { column, row });
        }
        exposure.push(parsed[0]);
        outcome.push(parsed[1]);
        for (k, v) in parsed[2..].iter().enumerate() {
            covariate_cols[k].push(*v);
        }
    }

    let outcome_kind = outcome_spec.outcome_kind.unwrap_or_else(|| {
        if outcome.iter().all(|y| *y == 0.0 || *y == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    });

    let covariates = covariate_specs
        .iter()
        .zip(covariate_cols)
        .map(|(spec, values)| Column { name: spec.name.clone(), values })
        .collect();

    let dataset = Dataset::new(exposure, outcome, outcome_kind, covariates)?;
    Ok(LoadedData { dataset, dropped_rows })
}

/// Write named numeric records as CSV with full-precision (shortest
/// round-trip) decimal rendering. An empty row list yields a header-only file.
pub fn write_table(
    columns: &[&str],
    rows: &[Vec<f64>],
    path: impl AsRef<Path>,
) -> Result<(), DataError> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(DataError::SchemaMismatch {
                row: i + 1,
                expected: columns.len(),
                actual: row.len(),
            });
        }
    }
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    writer.write_record(columns)?;
    for row in rows {
        writer.write_record(row.iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
