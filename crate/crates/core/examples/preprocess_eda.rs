//! Cycle filtering, labelling, normalisation and the EDA summary.
//!
//! `cargo run --example preprocess_eda`

use cyclekit::ingest::generate_example;
use cyclekit::preprocess::{self, FilterConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_example(1, 50, 120);
    let config = FilterConfig { min_cycle_len: 27, max_cycle_len: 29, ..FilterConfig::default() };
    let pre = preprocess::run(&data.periods, &data.outcomes, &config)?;
    let eda = preprocess::compute_eda(&data.periods, &data.outcomes, &pre);

    println!("cycle lengths: {:?}", eda.cycle_length_histogram);
    println!("cycles: {:?}", eda.cycles);
    println!("observations: {:?} (conserved: {})", eda.observations, eda.observations.is_conserved());
    println!("users: {:?}", eda.users);
    println!("per-day counts: {:?}", eda.per_day_obs);

    let mut csv = Vec::new();
    preprocess::write_dataset(&pre.dataset, &mut csv)?;
    let text = String::from_utf8(csv)?;
    for line in text.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
