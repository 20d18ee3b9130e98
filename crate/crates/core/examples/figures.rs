//! Figure model JSON and SVG rendering for the cycle, forest and strata plots.
//!
//! `cargo run --example figures -- out_dir`

use cyclekit::figures::{build_figure, render_forest_svg, render_svg, FigureOptions};
use cyclekit::ingest::generate_example;
use cyclekit::report::{self, AnalysisRequest, BootstrapRequest, MappingOverrides, Sources};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "figures-out".into()));
    std::fs::create_dir_all(&out)?;
    let data = generate_example(8, 100, 90);
    let (p, o, c) = (data.periods_csv(), data.outcomes_csv(), data.confounders_csv());
    let request = AnalysisRequest {
        bootstrap: BootstrapRequest { n_samples: 100, ..BootstrapRequest::default() },
        adjust: vec!["mean_steps".into(), "mean_sleep".into()],
        stratify: Some("age".into()),
        ..AnalysisRequest::default()
    };
    let sources = Sources { periods: &p, outcomes: &o, confounders: Some(&c) };
    let report = report::analyze_sources(&sources, &MappingOverrides::default(), &request)?;
    let figures = report.figures.as_ref().expect("figures are built by default");

    std::fs::write(out.join("cycle.json"), serde_json::to_string_pretty(&figures.cycle)?)?;
    std::fs::write(out.join("cycle.svg"), render_svg(&figures.cycle, 800, 500)?)?;
    if let Some(forest) = &figures.forest {
        std::fs::write(out.join("forest.svg"), render_forest_svg(forest, 640, 240)?)?;
    }
    if let Some(strata) = &figures.strata {
        std::fs::write(out.join("strata.svg"), render_svg(strata, 800, 500)?)?;
    }
    let minimal = build_figure(&report, &FigureOptions { show_ci_band: false, show_phase_shading: false, ..FigureOptions::default() });
    std::fs::write(out.join("cycle_minimal.svg"), render_svg(&minimal, 800, 500)?)?;
    println!("layers: {:?}", figures.cycle.layer_kinds());
    println!("wrote figures to {}", out.display());
    Ok(())
}
