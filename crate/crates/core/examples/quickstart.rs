//! Full analysis of the built-in synthetic dataset.
//!
//! `cargo run --example quickstart`

use cyclekit::ingest::generate_example;
use cyclekit::report::{self, AnalysisRequest, MappingOverrides, Sources};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_example(7, 100, 90);
    let (periods, outcomes) = (data.periods_csv(), data.outcomes_csv());
    let sources = Sources { periods: &periods, outcomes: &outcomes, confounders: None };
    let report = report::analyze_sources(&sources, &MappingOverrides::default(), &AnalysisRequest::default())?;

    let t2 = &report.table2;
    println!("{:<10} {:>8} {:>8} {:>8}  turning points", "outcome", "users", "obs", "p");
    println!("{:<10} {:>8} {:>8} {:>8}  {}", t2.outcome, t2.n_users, t2.n_obs_display, t2.p_value, t2.turning_points);
    println!("deviance explained: {:.2}%", report.fit.deviance_explained_pct);
    for seg in &report.phase_segments {
        println!("  day {:>3} -> {:>3}: slope {:+.3} %/day", seg.start_day, seg.end_day, seg.slope);
    }
    Ok(())
}
