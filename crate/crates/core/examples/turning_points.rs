//! Turning points of a fitted curve and OLS slopes of the phases between them.
//!
//! `cargo run --example turning_points`

use cyclekit::gam::{self, FourierSpec};
use cyclekit::ingest::generate_example;
use cyclekit::phases::{self, turning_points_of};
use cyclekit::preprocess::{self, FilterConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a curve with a trough at −7 and a peak at +7
    let spec = FourierSpec::with_harmonics(1);
    for tp in turning_points_of(&[100.0, 2.0, 0.0], &spec)? {
        println!("sine: {:?} at day {} ({:.4})", tp.kind, tp.day, tp.exact_day);
    }

    let data = generate_example(4, 100, 90);
    let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default())?;
    let fit = gam::fit(&pre.dataset, &FourierSpec::default())?;
    let tps = phases::find_turning_points(&fit)?;
    for tp in &tps {
        println!("{:?} at day {} (fitted {:.2})", tp.kind, tp.day, tp.fitted_value);
    }
    for seg in phases::fit_phase_models(&pre.dataset, &tps)? {
        let p = seg.p_value.map_or("n/a".to_string(), |p| format!("{p:.3}"));
        println!("day {:>3} to {:>3} ({} days): slope {:+.3}, p {p}", seg.start_day, seg.end_day, seg.span_days, seg.slope);
    }
    Ok(())
}
