//! Stratified refits by quartiles of an effect modifier.
//!
//! `cargo run --example effect_modifiers`

use cyclekit::gam::FourierSpec;
use cyclekit::ingest::generate_example;
use cyclekit::preprocess::{self, FilterConfig};
use cyclekit::stratify::{define_strata_matched, fit_strata, StrataKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = generate_example(6, 120, 90);
    let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default())?;
    let strata = define_strata_matched(&pre.dataset, &data.confounders, "age", StrataKind::Continuous)?;
    println!("age quartiles: q25 = {:?}, q75 = {:?}", strata.q25, strata.q75);
    for r in fit_strata(&pre.dataset, &strata, &FourierSpec::default()) {
        match &r.fit {
            Some(fit) => println!(
                "{:<6} ({}) users {:>3}, p = {:.2e}, amplitude {:.2}",
                r.label,
                r.membership.describe(),
                r.n_users,
                fit.p_value,
                fit.amplitude(1)
            ),
            None => println!("{:<6} not fitted: {}", r.label, r.unfit_reason.unwrap_or_default()),
        }
    }
    Ok(())
}
