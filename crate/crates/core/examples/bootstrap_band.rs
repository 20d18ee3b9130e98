//! User-level bootstrap confidence band around the fitted curve.
//!
//! `cargo run --release --example bootstrap_band`

use cyclekit::bootstrap::{bootstrap_band, BootstrapConfig};
use cyclekit::gam::{self, FourierSpec};
use cyclekit::ingest::generate_example;
use cyclekit::preprocess::{self, FilterConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_example(3, 80, 90);
    let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default())?;
    let spec = FourierSpec::default();
    let fit = gam::fit(&pre.dataset, &spec)?;
    let config = BootstrapConfig { n_samples: 200, seed: 11, ..BootstrapConfig::default() };
    let band = bootstrap_band(&pre.labelled, &spec, &config)?;
    println!("{} resamples, bounds at ranks {} and {}", band.n_effective_samples, band.lower_rank, band.upper_rank);
    let curve = gam::predict(&fit, &band.grid);
    for i in (0..band.grid.len()).step_by(4) {
        println!("day {:>3}: {:.2} [{:.2}, {:.2}]", band.grid[i], curve[i], band.lower[i], band.upper[i]);
    }
    Ok(())
}
