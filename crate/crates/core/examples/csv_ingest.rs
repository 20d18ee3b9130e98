//! Column detection and parsing for user-supplied CSV files.
//!
//! `cargo run --example csv_ingest`

use cyclekit::ingest::{self, resolve_mapping, sniff, MappingOverride, TableKind};

const PERIODS: &str = "participant,period_start\np1,03/01/2024\np1,31/01/2024\np2,10/01/2024\n";
const OUTCOMES: &str = "participant,day,resting_hr,notes\np1,05/01/2024,61.5,ok\np1,25/01/2024,62.0,\np2,11/01/2024,70.2,late\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (header, rows) = sniff(PERIODS.as_bytes(), 200)?;
    let periods_map = resolve_mapping(&header, &rows, TableKind::Periods, &MappingOverride::default())?;
    println!("periods mapping: {periods_map:?}");
    let periods = ingest::parse_periods(PERIODS.as_bytes(), &periods_map)?;
    println!("{} onsets, {} duplicate rows", periods.records.len(), periods.duplicate_rows);

    let (header, rows) = sniff(OUTCOMES.as_bytes(), 200)?;
    if let Err(e) = resolve_mapping(&header, &rows, TableKind::Outcomes, &MappingOverride::default()) {
        println!("auto-detection: {e}");
    }
    let overrides = MappingOverride {
        user_column: Some("participant".into()),
        value_column: Some("resting_hr".into()),
        ..MappingOverride::default()
    };
    let outcomes_map = resolve_mapping(&header, &rows, TableKind::Outcomes, &overrides)?;
    println!("outcomes mapping: {outcomes_map:?}");
    for obs in ingest::parse_outcomes(OUTCOMES.as_bytes(), &outcomes_map)?.records {
        println!("  {} {} {}", obs.user_id, obs.obs_date, obs.value);
    }

    let bad = "participant,period_start\np1,2024-01-03\np1,2024-02-30\n";
    let (header, rows) = sniff(bad.as_bytes(), 200)?;
    let m = resolve_mapping(&header, &rows, TableKind::Periods, &MappingOverride::default())?;
    match ingest::parse_periods(bad.as_bytes(), &m) {
        Err(e) => println!("rejected: {e} (line {:?})", e.row()),
        Ok(_) => println!("unexpectedly parsed"),
    }
    Ok(())
}
