//! Fourier fit, F-test and model diagnostics across harmonic orders.
//!
//! `cargo run --example fit_diagnostics`

use cyclekit::gam::{self, FourierSpec};
use cyclekit::ingest::generate_example;
use cyclekit::preprocess::{self, FilterConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_example(2, 100, 90);
    let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default())?;
    let fit = gam::fit(&pre.dataset, &FourierSpec::default())?;
    println!("coefficients: {:?}", fit.coefficients);
    println!("F({}, {}) = {:.2}, p = {:.3e}", fit.df_num, fit.df_den, fit.f_stat, fit.p_value);
    println!("harmonic amplitudes: {:.3}, {:.3}", fit.amplitude(1), fit.amplitude(2));

    let diag = gam::diagnostics(&fit, &pre.dataset);
    for e in &diag.aic_by_k {
        println!("K = {}: AIC {:.1}", e.k, e.aic);
    }
    println!("lowest AIC at K = {:?}", diag.best_k());
    for r in diag.residuals_by_day.iter().take(5) {
        if let Some(mean) = r.mean {
            println!("day {:>3}: n {:>4}, mean residual {mean:+.3}", r.day, r.n);
        }
    }
    Ok(())
}
