//! Calendar date parsing for tracker exports.
//!
//! ISO `YYYY-MM-DD` is always accepted. Slash-separated dates are accepted as
//! either `DD/MM/YYYY` or `MM/DD/YYYY`; the order is inferred once per column
//! from values whose first or second field exceeds 12. A column where every
//! slash date could be read both ways (with differing results) is rejected.

use chrono::NaiveDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DateFormat {
    Iso,
    DayMonthYear,
    MonthDayYear,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DateFormatError {
    #[error("dates mix ISO and slash-separated formats")]
    Mixed,
    #[error("slash-separated dates are ambiguous between DD/MM/YYYY and MM/DD/YYYY")]
    Ambiguous,
    #[error("slash-separated dates are inconsistent: some only parse as DD/MM/YYYY, others only as MM/DD/YYYY")]
    Inconsistent,
}

fn parse_iso(s: &str) -> Option<NaiveDate> {
    let mut parts = s.split('-');
    let (y, m, d) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || y.len() != 4 {
        return None;
    }
    NaiveDate::from_ymd_opt(y.parse().ok()?, m.parse().ok()?, d.parse().ok()?)
}

/// Splits `a/b/yyyy` into its three numeric fields.
fn slash_fields(s: &str) -> Option<(u32, u32, i32)> {
    let mut parts = s.split('/');
    let (a, b, y) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() || y.len() != 4 || a.is_empty() || b.is_empty() {
        return None;
    }
    Some((a.parse().ok()?, b.parse().ok()?, y.parse().ok()?))
}

fn slash_as(format: DateFormat, (a, b, y): (u32, u32, i32)) -> Option<NaiveDate> {
    match format {
        DateFormat::DayMonthYear => NaiveDate::from_ymd_opt(y, b, a),
        DateFormat::MonthDayYear => NaiveDate::from_ymd_opt(y, a, b),
        DateFormat::Iso => None,
    }
}

/// True when `s` is a valid date under at least one accepted format.
pub fn looks_like_date(s: &str) -> bool {
    let s = s.trim();
    if parse_iso(s).is_some() {
        return true;
    }
    slash_fields(s).is_some_and(|f| {
        slash_as(DateFormat::DayMonthYear, f).is_some() || slash_as(DateFormat::MonthDayYear, f).is_some()
    })
}

/// Infers the date format of a column. Unparseable values are ignored here;
/// they surface as row errors when the column is parsed.
pub fn infer_format<'a>(values: impl IntoIterator<Item = &'a str>) -> Result<DateFormat, DateFormatError> {
    let mut iso = 0usize;
    let mut slash = 0usize;
    let mut dmy_only = false;
    let mut mdy_only = false;
    let mut differing = false;
    for raw in values {
        let s = raw.trim();
        if parse_iso(s).is_some() {
            iso += 1;
            continue;
        }
        let Some(fields) = slash_fields(s) else { continue };
        let dmy = slash_as(DateFormat::DayMonthYear, fields);
        let mdy = slash_as(DateFormat::MonthDayYear, fields);
        match (dmy, mdy) {
            (Some(x), Some(y)) => {
                slash += 1;
                differing |= x != y;
            }
            (Some(_), None) => {
                slash += 1;
                dmy_only = true;
            }
            (None, Some(_)) => {
                slash += 1;
                mdy_only = true;
            }
            (None, None) => {}
        }
    }
    if slash == 0 {
        return Ok(DateFormat::Iso);
    }
    if iso > 0 {
        return Err(DateFormatError::Mixed);
    }
    match (dmy_only, mdy_only) {
        (true, true) => Err(DateFormatError::Inconsistent),
        (true, false) => Ok(DateFormat::DayMonthYear),
        (false, true) => Ok(DateFormat::MonthDayYear),
        // every value reads identically both ways, e.g. 03/03/2024
        (false, false) if !differing => Ok(DateFormat::DayMonthYear),
        (false, false) => Err(DateFormatError::Ambiguous),
    }
}

pub fn parse_date(format: DateFormat, s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    match format {
        DateFormat::Iso => parse_iso(s),
        other => slash_as(other, slash_fields(s)?),
    }
}
