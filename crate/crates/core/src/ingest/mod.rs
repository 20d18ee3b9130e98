//! CSV ingestion for period dates, daily outcomes and user-level confounders.
//!
//! All readers expect a UTF-8, comma-delimited file with a header row. Row
//! numbers in errors are 1-based file lines, so the first data row is row 2.

mod dates;
mod detect;
mod synthetic;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use dates::{infer_format, looks_like_date, parse_date, DateFormat, DateFormatError};
pub use detect::{detect_columns, resolve_mapping, sniff, MappingOverride};
pub use synthetic::{generate_example, generate_example_with, ExampleConfig, ExampleData, EXAMPLE_OUTCOME_NAME};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum IngestError {
    #[error("input is empty")]
    EmptyInput,
    #[error("missing column for {role}")]
    MissingColumn { role: String },
    #[error("ambiguous columns for {role}: {candidates:?}")]
    AmbiguousColumns { role: String, candidates: Vec<String> },
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("column '{column}': {source}")]
    DateFormat { column: String, source: DateFormatError },
}

impl IngestError {
    /// File line of the offending row, when the error is tied to one.
    pub fn row(&self) -> Option<usize> {
        match self {
            IngestError::Parse { row, .. } => Some(*row),
            _ => None,
        }
    }

    fn parse(row: usize, message: impl Into<String>) -> Self {
        IngestError::Parse { row, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub user_id: String,
    pub onset_date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub user_id: String,
    pub obs_date: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    Periods,
    Outcomes,
    Confounders,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionMode {
    Explicit,
    Auto,
}

/// Which source columns play which role.
///
/// `date_column` is absent for confounder tables and `value_column` is only
/// present for outcome tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub user_column: String,
    pub date_column: Option<String>,
    pub value_column: Option<String>,
    pub detection_mode: DetectionMode,
}

impl ColumnMapping {
    pub fn periods(user: &str, date: &str) -> Self {
        Self {
            user_column: user.into(),
            date_column: Some(date.into()),
            value_column: None,
            detection_mode: DetectionMode::Explicit,
        }
    }

    pub fn outcomes(user: &str, date: &str, value: &str) -> Self {
        Self {
            user_column: user.into(),
            date_column: Some(date.into()),
            value_column: Some(value.into()),
            detection_mode: DetectionMode::Explicit,
        }
    }

    pub fn confounders(user: &str) -> Self {
        Self {
            user_column: user.into(),
            date_column: None,
            value_column: None,
            detection_mode: DetectionMode::Explicit,
        }
    }
}

/// Records plus the number of exact duplicate data rows seen.
///
/// Period duplicates are collapsed; outcome duplicates are retained (several
/// readings per day are legitimate) and only counted.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub duplicate_rows: usize,
}

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(source: R) -> Result<Self, IngestError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| IngestError::parse(1, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(IngestError::EmptyInput);
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| IngestError::parse(i + 2, e.to_string()))?;
            rows.push(rec);
        }
        if rows.is_empty() {
            return Err(IngestError::EmptyInput);
        }
        Ok(Self { header, rows })
    }

    fn index(&self, name: &str, role: &str) -> Result<usize, IngestError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn { role: format!("{role} ('{name}')") })
    }

    fn date_format(&self, col: usize) -> Result<DateFormat, IngestError> {
        infer_format(self.rows.iter().filter_map(|r| r.get(col))).map_err(|source| IngestError::DateFormat {
            column: self.header[col].clone(),
            source,
        })
    }
}

fn required<'a>(field: &'a Option<String>, role: &str) -> Result<&'a str, IngestError> {
    field.as_deref().ok_or_else(|| IngestError::MissingColumn { role: role.into() })
}

fn user_cell(rec: &csv::StringRecord, col: usize, row: usize) -> Result<String, IngestError> {
    match rec.get(col) {
        Some(u) if !u.is_empty() => Ok(u.to_string()),
        _ => Err(IngestError::parse(row, "missing user id")),
    }
}

fn date_cell(rec: &csv::StringRecord, col: usize, format: DateFormat, row: usize) -> Result<NaiveDate, IngestError> {
    let raw = rec.get(col).unwrap_or("");
    parse_date(format, raw).ok_or_else(|| IngestError::parse(row, format!("malformed date '{raw}'")))
}

pub fn parse_periods<R: Read>(source: R, mapping: &ColumnMapping) -> Result<Parsed<PeriodRecord>, IngestError> {
    let table = Table::read(source)?;
    let user_col = table.index(&mapping.user_column, "user")?;
    let date_col = table.index(required(&mapping.date_column, "date")?, "date")?;
    let format = table.date_format(date_col)?;

    let mut records = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 2;
        records.push(PeriodRecord {
            user_id: user_cell(rec, user_col, row)?,
            onset_date: date_cell(rec, date_col, format, row)?,
        });
    }
    records.sort();
    let before = records.len();
    records.dedup();
    Ok(Parsed { duplicate_rows: before - records.len(), records })
}

pub fn parse_outcomes<R: Read>(source: R, mapping: &ColumnMapping) -> Result<Parsed<RawObservation>, IngestError> {
    let table = Table::read(source)?;
    let user_col = table.index(&mapping.user_column, "user")?;
    let date_col = table.index(required(&mapping.date_column, "date")?, "date")?;
    let value_col = table.index(required(&mapping.value_column, "value")?, "value")?;
    let format = table.date_format(date_col)?;

    let mut records = Vec::with_capacity(table.rows.len());
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 2;
        let raw = rec.get(value_col).unwrap_or("");
        let value: f64 = raw
            .parse()
            .map_err(|_| IngestError::parse(row, format!("malformed value '{raw}'")))?;
        if !value.is_finite() {
            return Err(IngestError::parse(row, format!("non-finite value '{raw}'")));
        }
        records.push(RawObservation {
            user_id: user_cell(rec, user_col, row)?,
            obs_date: date_cell(rec, date_col, format, row)?,
            value,
        });
    }
    records.sort_by(|a, b| (&a.user_id, a.obs_date).cmp(&(&b.user_id, b.obs_date)));
    let duplicate_rows = records
        .windows(2)
        .filter(|w| w[0].user_id == w[1].user_id && w[0].obs_date == w[1].obs_date && w[0].value == w[1].value)
        .count();
    Ok(Parsed { records, duplicate_rows })
}

/// One covariate cell. Numeric columns contain only `Number` and `Missing`;
/// a column with any `Label` is categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Number(f64),
    Label(String),
    Missing,
}

impl CovariateValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            CovariateValue::Number(v) => Some(*v),
            _ => None,
        }
    }

    /// Group label used when the column is treated as categorical.
    pub fn label(&self) -> Option<String> {
        match self {
            CovariateValue::Number(v) => Some(v.to_string()),
            CovariateValue::Label(s) => Some(s.clone()),
            CovariateValue::Missing => None,
        }
    }
}

/// User-level covariates, one row per user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfounderTable {
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, Vec<CovariateValue>>,
}

impl ConfounderTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: BTreeMap::new() }
    }

    pub fn insert(&mut self, user_id: impl Into<String>, values: Vec<CovariateValue>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.insert(user_id.into(), values);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, user_id: &str, name: &str) -> Option<&CovariateValue> {
        let idx = self.column_index(name)?;
        self.rows.get(user_id).map(|r| &r[idx])
    }

    pub fn is_numeric(&self, name: &str) -> bool {
        self.column_index(name)
            .is_some_and(|idx| self.rows.values().all(|r| !matches!(r[idx], CovariateValue::Label(_))))
    }

    /// Non-missing numeric values of one column keyed by user.
    pub fn numeric_values(&self, name: &str) -> Option<BTreeMap<&str, f64>> {
        let idx = self.column_index(name)?;
        Some(
            self.rows
                .iter()
                .filter_map(|(u, r)| r[idx].as_number().map(|v| (u.as_str(), v)))
                .collect(),
        )
    }
}

fn parse_covariate(raw: &str, row: usize) -> Result<CovariateValue, IngestError> {
    match raw {
        "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL" | "." => return Ok(CovariateValue::Missing),
        _ => {}
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(CovariateValue::Number(v)),
        Ok(_) => Err(IngestError::parse(row, format!("non-finite covariate '{raw}'"))),
        Err(_) => Ok(CovariateValue::Label(raw.to_string())),
    }
}

pub fn parse_confounders<R: Read>(source: R, mapping: &ColumnMapping) -> Result<ConfounderTable, IngestError> {
    let table = Table::read(source)?;
    let user_col = table.index(&mapping.user_column, "user")?;
    let columns: Vec<String> = table
        .header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != user_col)
        .map(|(_, h)| h.clone())
        .collect();
    let mut out = ConfounderTable::new(columns);
    for (i, rec) in table.rows.iter().enumerate() {
        let row = i + 2;
        let user = user_cell(rec, user_col, row)?;
        let values = (0..table.header.len())
            .filter(|c| *c != user_col)
            .map(|c| parse_covariate(rec.get(c).unwrap_or(""), row))
            .collect::<Result<Vec<_>, _>>()?;
        if out.rows.contains_key(&user) {
            return Err(IngestError::parse(row, format!("duplicate row for user '{user}'")));
        }
        out.insert(user, values);
    }
    Ok(out)
}

pub fn write_periods<W: Write>(records: &[PeriodRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "onset_date"])?;
    for r in records {
        w.write_record([r.user_id.as_str(), &r.onset_date.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outcomes<W: Write>(records: &[RawObservation], value_name: &str, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "date", value_name])?;
    for r in records {
        w.write_record([r.user_id.as_str(), &r.obs_date.to_string(), &r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_confounders<W: Write>(table: &ConfounderTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["user_id".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (user, values) in &table.rows {
        let mut rec = vec![user.clone()];
        rec.extend(values.iter().map(|v| match v {
            CovariateValue::Number(x) => x.to_string(),
            CovariateValue::Label(s) => s.clone(),
            CovariateValue::Missing => String::new(),
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
