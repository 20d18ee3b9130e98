//! Layered figure models built from an [`AnalysisReport`], and their SVG form.
//!
//! The JSON model is what clients consume; [`render_svg`] is a pure function of
//! it. Every plotted value is copied from the report.

mod svg;

use serde::{Deserialize, Serialize};

pub use svg::{render_forest_svg, render_svg, RenderError};

use crate::phases::{DailyMean, TurningKind};
use crate::preprocess::{MAX_CYCLE_DAY, MIN_CYCLE_DAY};
use crate::report::AnalysisReport;

pub const FIGURE_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub curve: String,
    pub band: String,
    pub daily_means: String,
    pub adjusted: String,
    pub peak: String,
    pub trough: String,
    pub phase_line: String,
    pub rising_shade: String,
    pub falling_shade: String,
    pub text: String,
    pub axis: String,
    /// Cycled through for stratum curves.
    pub series: Vec<String>,
}

impl Default for Palette {
    fn default() -> Self {
        let s = |v: &str| v.to_string();
        Self {
            curve: s("#1f4e79"),
            band: s("#9ecae1"),
            daily_means: s("#7f7f7f"),
            adjusted: s("#d62728"),
            peak: s("#2ca02c"),
            trough: s("#9467bd"),
            phase_line: s("#444444"),
            rising_shade: s("#fdebd3"),
            falling_shade: s("#e3edf7"),
            text: s("#222222"),
            axis: s("#333333"),
            series: vec![s("#1b9e77"), s("#d95f02"), s("#7570b3"), s("#e7298a"), s("#66a61e"), s("#e6ab02")],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub width: u32,
    pub height: u32,
    pub font_family: String,
    pub font_size: f64,
    pub palette: Palette,
}

impl Default for Style {
    fn default() -> Self {
        Self {
            width: 800,
            height: 500,
            font_family: "DejaVu Sans, Helvetica, Arial, sans-serif".into(),
            font_size: 12.0,
            palette: Palette::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub label: String,
    pub min: f64,
    pub max: f64,
    pub ticks: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShadedSpan {
    pub start_day: i32,
    pub span_days: i32,
    pub rising: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseLine {
    pub start_day: i32,
    pub span_days: i32,
    pub intercept: f64,
    pub slope: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub day: i32,
    pub kind: TurningKind,
    pub value: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    PhaseShading {
        spans: Vec<ShadedSpan>,
    },
    CiBand {
        days: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        ci_level: f64,
    },
    DailyMeans {
        points: Vec<DailyMean>,
    },
    Curve {
        id: String,
        label: String,
        color: String,
        days: Vec<f64>,
        values: Vec<f64>,
        /// Set instead of data for series that could not be fitted.
        note: Option<String>,
    },
    PhaseLines {
        lines: Vec<PhaseLine>,
    },
    TurningMarkers {
        markers: Vec<Marker>,
    },
    Annotation {
        text: String,
    },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::PhaseShading { .. } => "phase_shading",
            Layer::CiBand { .. } => "ci_band",
            Layer::DailyMeans { .. } => "daily_means",
            Layer::Curve { .. } => "curve",
            Layer::PhaseLines { .. } => "phase_lines",
            Layer::TurningMarkers { .. } => "turning_markers",
            Layer::Annotation { .. } => "annotation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureModel {
    pub figure_schema: u32,
    pub title: String,
    pub x_axis: Axis,
    pub y_axis: Axis,
    /// Drawn in order; later layers paint over earlier ones.
    pub layers: Vec<Layer>,
    pub style: Style,
}

impl FigureModel {
    /// Axes only, fixed cycle-day x-range.
    pub fn empty(title: impl Into<String>, y_axis: Axis) -> Self {
        Self { figure_schema: FIGURE_SCHEMA, title: title.into(), x_axis: day_axis(), y_axis, layers: Vec::new(), style: Style::default() }
    }

    pub fn layer_kinds(&self) -> Vec<&'static str> {
        self.layers.iter().map(Layer::kind).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestRow {
    pub label: String,
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    /// The interval excludes zero.
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub figure_schema: u32,
    pub title: String,
    pub x_label: String,
    pub rows: Vec<ForestRow>,
    pub reference: f64,
    pub style: Style,
}

impl ForestModel {
    pub fn new(rows: Vec<ForestRow>) -> Self {
        Self {
            figure_schema: FIGURE_SCHEMA,
            title: "Confounder effects".into(),
            x_label: "Coefficient (% of individual mean per unit)".into(),
            rows,
            reference: 0.0,
            style: Style { height: 320, ..Style::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureOptions {
    pub title: Option<String>,
    pub show_ci_band: bool,
    /// Raw daily population means overlay.
    pub show_daily_means: bool,
    pub show_phase_shading: bool,
    pub show_phase_lines: bool,
    pub show_turning_points: bool,
    pub show_adjusted: bool,
    pub width: u32,
    pub height: u32,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            title: None,
            show_ci_band: true,
            show_daily_means: true,
            show_phase_shading: true,
            show_phase_lines: true,
            show_turning_points: true,
            show_adjusted: true,
            width: 800,
            height: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFigures {
    pub cycle: FigureModel,
    pub forest: Option<ForestModel>,
    pub strata: Option<FigureModel>,
}

fn day_axis() -> Axis {
    Axis {
        label: "Cycle day".into(),
        min: MIN_CYCLE_DAY as f64,
        max: MAX_CYCLE_DAY as f64,
        ticks: vec![-14.0, -10.0, -7.0, -4.0, 0.0, 4.0, 7.0, 10.0, 13.0],
    }
}

fn value_axis(values: impl IntoIterator<Item = f64>) -> Axis {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.into_iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        (lo, hi) = (99.0, 101.0);
    }
    let pad = if hi > lo { (hi - lo) * 0.08 } else { 1.0 };
    let (min, max) = (lo - pad, hi + pad);
    let ticks = (0..5).map(|i| ((min + (max - min) * i as f64 / 4.0) * 100.0).round() / 100.0).collect();
    Axis { label: "% of individual mean".into(), min, max, ticks }
}

pub fn format_p_annotation(p: f64) -> String {
    if p < 0.001 {
        "p < 0.001".into()
    } else {
        format!("p = {p:.3}")
    }
}

pub fn slope_label(slope: f64, se: Option<f64>) -> String {
    match se {
        Some(se) => format!("{slope:+.2} ± {se:.2} %/day"),
        None => format!("{slope:+.2} %/day"),
    }
}

/// Main cycle figure. Layers whose data is absent from the report are omitted.
pub fn build_figure(report: &AnalysisReport, options: &FigureOptions) -> FigureModel {
    let palette = Palette::default();
    let mut layers = Vec::new();
    let mut y_values: Vec<f64> = report.curve.clone();

    if options.show_phase_shading && !report.phase_segments.is_empty() {
        layers.push(Layer::PhaseShading {
            spans: report
                .phase_segments
                .iter()
                .map(|s| ShadedSpan { start_day: s.start_day, span_days: s.span_days, rising: s.slope >= 0.0 })
                .collect(),
        });
    }
    if let (true, Some(band)) = (options.show_ci_band, &report.band) {
        y_values.extend(band.lower.iter().chain(&band.upper));
        layers.push(Layer::CiBand {
            days: band.grid.clone(),
            lower: band.lower.clone(),
            upper: band.upper.clone(),
            ci_level: band.ci_level,
        });
    }
    if options.show_daily_means && !report.daily_means.is_empty() {
        y_values.extend(report.daily_means.iter().map(|m| m.mean));
        layers.push(Layer::DailyMeans { points: report.daily_means.clone() });
    }
    layers.push(Layer::Curve {
        id: "fit".into(),
        label: "Fitted curve".into(),
        color: palette.curve.clone(),
        days: report.grid.clone(),
        values: report.curve.clone(),
        note: None,
    });
    if let (true, Some(adj)) = (options.show_adjusted, &report.adjusted) {
        if !adj.estimates.is_empty() {
            y_values.extend(&adj.adjusted);
            layers.push(Layer::Curve {
                id: "adjusted".into(),
                label: "Adjusted".into(),
                color: palette.adjusted.clone(),
                days: adj.grid.clone(),
                values: adj.adjusted.clone(),
                note: None,
            });
        }
    }
    if options.show_phase_lines && !report.phase_segments.is_empty() {
        layers.push(Layer::PhaseLines {
            lines: report
                .phase_segments
                .iter()
                .map(|s| PhaseLine {
                    start_day: s.start_day,
                    span_days: s.span_days,
                    intercept: s.intercept,
                    slope: s.slope,
                    label: slope_label(s.slope, s.slope_se),
                })
                .collect(),
        });
    }
    if options.show_turning_points && !report.turning_points.is_empty() {
        layers.push(Layer::TurningMarkers {
            markers: report
                .turning_points
                .iter()
                .map(|t| Marker { day: t.day, kind: t.kind, value: t.fitted_value, label: format!("Day {}", t.day) })
                .collect(),
        });
    }
    layers.push(Layer::Annotation {
        text: format!(
            "{}, deviance explained = {:.2}%",
            format_p_annotation(report.fit.p_value),
            report.fit.deviance_explained_pct
        ),
    });

    FigureModel {
        figure_schema: FIGURE_SCHEMA,
        title: options.title.clone().unwrap_or_else(|| report.outcome.clone()),
        x_axis: day_axis(),
        y_axis: value_axis(y_values),
        layers,
        style: Style { width: options.width, height: options.height, ..Style::default() },
    }
}

/// Overlay of per-stratum curves, if the report has strata.
pub fn build_strata_figure(report: &AnalysisReport, options: &FigureOptions) -> Option<FigureModel> {
    let strata = report.strata.as_ref()?;
    let palette = Palette::default();
    let grid = report.grid.clone();
    let mut y_values = Vec::new();
    let layers: Vec<Layer> = strata
        .results
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let values = r.curve.clone().unwrap_or_default();
            y_values.extend(&values);
            Layer::Curve {
                id: format!("stratum-{i}"),
                label: format!("{} ({})", r.label, r.membership.describe()),
                color: palette.series[i % palette.series.len()].clone(),
                days: if values.is_empty() { Vec::new() } else { grid.clone() },
                values,
                note: r.unfit_reason.clone(),
            }
        })
        .collect();
    Some(FigureModel {
        figure_schema: FIGURE_SCHEMA,
        title: format!("{} by {}", options.title.clone().unwrap_or_else(|| report.outcome.clone()), strata.definition.modifier),
        x_axis: day_axis(),
        y_axis: value_axis(y_values),
        layers,
        style: Style { width: options.width, height: options.height, ..Style::default() },
    })
}

pub fn build_report_figures(report: &AnalysisReport, options: &FigureOptions) -> ReportFigures {
    let forest = (!report.confounder_estimates.is_empty())
        .then(|| crate::confound::forest_data(&report.confounder_estimates));
    ReportFigures { cycle: build_figure(report, options), forest, strata: build_strata_figure(report, options) }
}
