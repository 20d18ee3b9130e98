//! Column role detection for uploaded tables.

use std::collections::BTreeSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{looks_like_date, ColumnMapping, DetectionMode, IngestError, TableKind};

/// Reads the header and up to `max_rows` data rows of a CSV source.
pub fn sniff<R: Read>(source: R, max_rows: usize) -> Result<(Vec<String>, Vec<Vec<String>>), IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| IngestError::Parse { row: 1, message: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().take(max_rows).enumerate() {
        let rec = rec.map_err(|e| IngestError::Parse { row: i + 2, message: e.to_string() })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

struct ColumnProfile<'a> {
    name: &'a str,
    date_fraction: f64,
    numeric: bool,
    cardinality: usize,
}

fn profile<'a>(header: &'a [String], rows: &[Vec<String>]) -> Vec<ColumnProfile<'a>> {
    header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let cells: Vec<&str> = rows
                .iter()
                .filter_map(|r| r.get(i).map(String::as_str))
                .filter(|c| !c.is_empty())
                .collect();
            let dates = cells.iter().filter(|c| looks_like_date(c)).count();
            let numeric = !cells.is_empty() && cells.iter().all(|c| c.parse::<f64>().is_ok());
            let cardinality = cells.iter().collect::<BTreeSet<_>>().len();
            ColumnProfile {
                name,
                date_fraction: if cells.is_empty() { 0.0 } else { dates as f64 / cells.len() as f64 },
                numeric,
                cardinality,
            }
        })
        .collect()
}

fn is_user_like(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.contains("user") || lower.split(|c: char| !c.is_ascii_alphanumeric()).any(|t| t == "id")
}

fn is_date_like(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    ["date", "day", "onset", "start"].iter().any(|k| lower.contains(k))
}

fn pick_date<'a>(cols: &[ColumnProfile<'a>]) -> Result<&'a str, IngestError> {
    let best = cols.iter().map(|c| c.date_fraction).fold(0.0, f64::max);
    if best == 0.0 {
        return Err(IngestError::MissingColumn { role: "date".into() });
    }
    let tied: Vec<&ColumnProfile> = cols.iter().filter(|c| c.date_fraction == best).collect();
    if tied.len() == 1 {
        return Ok(tied[0].name);
    }
    let named: Vec<&&ColumnProfile> = tied.iter().filter(|c| is_date_like(c.name)).collect();
    match named.as_slice() {
        [only] => Ok(only.name),
        _ => Err(IngestError::AmbiguousColumns {
            role: "date".into(),
            candidates: tied.iter().map(|c| c.name.to_string()).collect(),
        }),
    }
}

fn pick_user<'a>(cols: &[&ColumnProfile<'a>], kind: TableKind) -> Result<&'a str, IngestError> {
    if cols.is_empty() {
        return Err(IngestError::MissingColumn { role: "user".into() });
    }
    let named: Vec<&&ColumnProfile> = cols.iter().filter(|c| is_user_like(c.name)).collect();
    if named.len() == 1 {
        return Ok(named[0].name);
    }
    if named.len() > 1 {
        // prefer an explicit "user" over a bare "id"
        let users: Vec<_> = named.iter().filter(|c| c.name.to_ascii_lowercase().contains("user")).collect();
        if users.len() == 1 {
            return Ok(users[0].name);
        }
    }
    let ambiguous = |cands: Vec<&str>| IngestError::AmbiguousColumns {
        role: "user".into(),
        candidates: cands.into_iter().map(str::to_string).collect(),
    };
    if kind == TableKind::Confounders {
        // one row per user: cardinality says nothing, but ids are rarely numeric
        let textual: Vec<_> = cols.iter().filter(|c| !c.numeric).collect();
        return match textual.as_slice() {
            [only] => Ok(only.name),
            _ => Err(ambiguous(cols.iter().map(|c| c.name).collect())),
        };
    }
    let min = cols.iter().map(|c| c.cardinality).min().unwrap_or(0);
    let lowest: Vec<_> = cols.iter().filter(|c| c.cardinality == min).collect();
    match lowest.as_slice() {
        [only] => Ok(only.name),
        _ => Err(ambiguous(lowest.iter().map(|c| c.name).collect())),
    }
}

/// Detects the user/date/value columns of a table from its header and a
/// sample of rows. Pure: the same inputs always give the same mapping.
pub fn detect_columns(
    header: &[String],
    sample_rows: &[Vec<String>],
    kind: TableKind,
) -> Result<ColumnMapping, IngestError> {
    detect_with(header, sample_rows, kind, &MappingOverride::default())
}

fn pick_value<'a>(cols: &[&ColumnProfile<'a>], user_fixed: bool) -> Result<&'a str, IngestError> {
    let user_named: Vec<_> = if user_fixed { Vec::new() } else { cols.iter().filter(|c| is_user_like(c.name)).collect() };
    let numeric: Vec<&ColumnProfile> = cols
        .iter()
        .filter(|c| c.numeric && !(user_named.len() == 1 && c.name == user_named[0].name))
        .copied()
        .collect();
    match numeric.as_slice() {
        [] => Err(IngestError::MissingColumn { role: "value".into() }),
        [only] => Ok(only.name),
        many => {
            // the user column may itself be numeric, in which case it is the
            // lowest-cardinality one and the value is whatever remains
            let min = many.iter().map(|c| c.cardinality).min().unwrap_or(0);
            let rest: Vec<_> = many.iter().filter(|c| c.cardinality != min).collect();
            match rest.as_slice() {
                [only] if user_named.is_empty() && !user_fixed => Ok(only.name),
                _ => Err(IngestError::AmbiguousColumns {
                    role: "value".into(),
                    candidates: many.iter().map(|c| c.name.to_string()).collect(),
                }),
            }
        }
    }
}

fn detect_with(
    header: &[String],
    sample_rows: &[Vec<String>],
    kind: TableKind,
    fixed: &MappingOverride,
) -> Result<ColumnMapping, IngestError> {
    if header.is_empty() || sample_rows.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let cols = profile(header, sample_rows);
    let user_fixed = fixed.user_column.as_deref();

    if kind == TableKind::Confounders {
        let all: Vec<&ColumnProfile> = cols.iter().collect();
        let user = match user_fixed {
            Some(u) => u.to_string(),
            None => pick_user(&all, kind)?.to_string(),
        };
        return Ok(ColumnMapping {
            user_column: user,
            date_column: None,
            value_column: None,
            detection_mode: DetectionMode::Auto,
        });
    }

    let date = match fixed.date_column.as_deref() {
        Some(d) => d.to_string(),
        None => {
            let candidates: Vec<ColumnProfile> = profile(header, sample_rows)
                .into_iter()
                .filter(|c| Some(c.name) != user_fixed && Some(c.name) != fixed.value_column.as_deref())
                .collect();
            pick_date(&candidates)?.to_string()
        }
    };
    let non_date: Vec<&ColumnProfile> = cols.iter().filter(|c| c.name != date).collect();

    let value = match (kind, fixed.value_column.as_deref()) {
        (TableKind::Outcomes, Some(v)) => Some(v.to_string()),
        (TableKind::Outcomes, None) => {
            let pool: Vec<&ColumnProfile> = non_date.iter().filter(|c| Some(c.name) != user_fixed).copied().collect();
            Some(pick_value(&pool, user_fixed.is_some())?.to_string())
        }
        _ => None,
    };

    let user = match user_fixed {
        Some(u) => u.to_string(),
        None => {
            let pool: Vec<&ColumnProfile> =
                non_date.into_iter().filter(|c| Some(c.name) != value.as_deref()).collect();
            pick_user(&pool, kind)?.to_string()
        }
    };

    Ok(ColumnMapping {
        user_column: user,
        date_column: Some(date),
        value_column: value,
        detection_mode: DetectionMode::Auto,
    })
}

/// Partial user-supplied mapping; unset roles fall back to detection.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MappingOverride {
    pub user_column: Option<String>,
    pub date_column: Option<String>,
    pub value_column: Option<String>,
}

impl MappingOverride {
    pub fn is_empty(&self) -> bool {
        self.user_column.is_none() && self.date_column.is_none() && self.value_column.is_none()
    }

    fn complete_for(&self, kind: TableKind) -> bool {
        self.user_column.is_some()
            && match kind {
                TableKind::Periods => self.date_column.is_some(),
                TableKind::Outcomes => self.date_column.is_some() && self.value_column.is_some(),
                TableKind::Confounders => true,
            }
    }
}

/// Combines detection with overrides and checks every named column exists.
pub fn resolve_mapping(
    header: &[String],
    sample_rows: &[Vec<String>],
    kind: TableKind,
    overrides: &MappingOverride,
) -> Result<ColumnMapping, IngestError> {
    let mut mapping = if overrides.complete_for(kind) {
        ColumnMapping {
            user_column: overrides.user_column.clone().unwrap_or_default(),
            date_column: if kind == TableKind::Confounders { None } else { overrides.date_column.clone() },
            value_column: if kind == TableKind::Outcomes { overrides.value_column.clone() } else { None },
            detection_mode: DetectionMode::Explicit,
        }
    } else {
        detect_with(header, sample_rows, kind, overrides)?
    };
    if !overrides.is_empty() {
        mapping.detection_mode = DetectionMode::Explicit;
    }
    let named = [Some(&mapping.user_column), mapping.date_column.as_ref(), mapping.value_column.as_ref()];
    for name in named.into_iter().flatten() {
        if !header.contains(name) {
            return Err(IngestError::MissingColumn { role: format!("'{name}'") });
        }
    }
    Ok(mapping)
}
