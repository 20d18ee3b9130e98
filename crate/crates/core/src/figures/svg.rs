//! SVG 1.1 rendering of figure models.

use std::fmt::Write;

use super::{Axis, FigureModel, ForestModel, Layer, Style};
use crate::phases::TurningKind;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("figure dimensions must be positive, got {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
}

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Two-decimal coordinates keep output compact and byte-stable.
fn n(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(width: u32, height: u32, x: &Axis, y: &Axis) -> Self {
        Self {
            x0: MARGIN_LEFT,
            x1: width as f64 - MARGIN_RIGHT,
            y0: MARGIN_TOP,
            y1: height as f64 - MARGIN_BOTTOM,
            xmin: x.min,
            xmax: x.max,
            ymin: y.min,
            ymax: y.max,
        }
    }

    fn x(&self, v: f64) -> f64 {
        self.x0 + (v - self.xmin) / (self.xmax - self.xmin) * (self.x1 - self.x0)
    }

    fn y(&self, v: f64) -> f64 {
        let span = if self.ymax > self.ymin { self.ymax - self.ymin } else { 1.0 };
        self.y1 - (v - self.ymin) / span * (self.y1 - self.y0)
    }
}

fn header(out: &mut String, width: u32, height: u32, style: &Style) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="{}" font-size="{}">"#,
        escape(&style.font_family),
        style.font_size
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>"##);
}

fn axes(out: &mut String, f: &Frame, x: &Axis, y: &Axis, style: &Style) {
    let c = &style.palette.axis;
    let _ = writeln!(out, r#"<g id="axes" stroke="{c}" fill="none" stroke-width="1">"#);
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, n(f.x0), n(f.y1), n(f.x1), n(f.y1));
    let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#, n(f.x0), n(f.y0), n(f.x0), n(f.y1));
    for t in &x.ticks {
        let _ = writeln!(out, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}"/>"#, n(f.x(*t)), n(f.y1), n(f.y1 + 5.0));
    }
    for t in &y.ticks {
        let _ = writeln!(out, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}"/>"#, n(f.x0 - 5.0), n(f.y(*t)), n(f.x0));
    }
    let _ = writeln!(out, "</g>");
    let tc = &style.palette.text;
    let _ = writeln!(out, r#"<g id="tick-labels" fill="{tc}">"#);
    for t in &x.ticks {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, n(f.x(*t)), n(f.y1 + 18.0), t);
    }
    for t in &y.ticks {
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, n(f.x0 - 8.0), n(f.y(*t) + 4.0), t);
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        n((f.x0 + f.x1) / 2.0),
        n(f.y1 + 38.0),
        escape(&x.label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        n((f.y0 + f.y1) / 2.0),
        escape(&y.label)
    );
    let _ = writeln!(out, "</g>");
}

/// Pieces of the cyclic interval `[start, start + span]` inside the x-range.
fn wrapped_pieces(start: f64, span: f64, xmin: f64, xmax: f64) -> Vec<(f64, f64)> {
    let end = start + span;
    let mut pieces = Vec::new();
    for shift in [0.0, -28.0] {
        let (a, b) = ((start + shift).max(xmin), (end + shift).min(xmax));
        if a < b {
            pieces.push((a, b));
        }
    }
    pieces
}

fn polyline(f: &Frame, xs: &[f64], ys: &[f64]) -> String {
    let mut d = String::new();
    for (i, (x, y)) in xs.iter().zip(ys).enumerate() {
        let _ = write!(d, "{}{},{} ", if i == 0 { "M" } else { "L" }, n(f.x(*x)), n(f.y(*y)));
    }
    d.trim_end().to_string()
}

fn layer(out: &mut String, f: &Frame, l: &Layer, style: &Style) {
    let p = &style.palette;
    match l {
        Layer::PhaseShading { spans } => {
            let _ = writeln!(out, r#"<g id="phase-shading" fill-opacity="0.6">"#);
            for s in spans {
                let fill = if s.rising { &p.rising_shade } else { &p.falling_shade };
                for (a, b) in wrapped_pieces(s.start_day as f64, s.span_days as f64, f.xmin, f.xmax) {
                    let _ = writeln!(
                        out,
                        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#,
                        n(f.x(a)),
                        n(f.y0),
                        n(f.x(b) - f.x(a)),
                        n(f.y1 - f.y0)
                    );
                }
            }
            let _ = writeln!(out, "</g>");
        }
        Layer::CiBand { days, lower, upper, .. } => {
            let mut d = polyline(f, days, upper);
            for (x, y) in days.iter().zip(lower).rev() {
                let _ = write!(d, " L{},{}", n(f.x(*x)), n(f.y(*y)));
            }
            let _ = writeln!(out, r#"<path id="ci-band" d="{d} Z" fill="{}" fill-opacity="0.5" stroke="none"/>"#, p.band);
        }
        Layer::DailyMeans { points } => {
            let _ = writeln!(out, r#"<g id="daily-means" fill="{}">"#, p.daily_means);
            for m in points {
                let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="2.5"/>"#, n(f.x(m.day as f64)), n(f.y(m.mean)));
            }
            let _ = writeln!(out, "</g>");
        }
        Layer::Curve { id, color, days, values, .. } => {
            if !values.is_empty() {
                let _ = writeln!(
                    out,
                    r#"<path id="curve-{}" d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    escape(id),
                    polyline(f, days, values)
                );
            }
        }
        Layer::PhaseLines { lines } => {
            let _ = writeln!(out, r#"<g id="phase-lines" stroke="{}" stroke-dasharray="5,3" stroke-width="1.2">"#, p.phase_line);
            for line in lines {
                let start = line.start_day as f64;
                for (a, b) in wrapped_pieces(start, line.span_days as f64, f.xmin, f.xmax) {
                    // the regression is on the unwrapped axis; shift back before evaluating
                    let shift = if a < start { 28.0 } else { 0.0 };
                    let ya = line.intercept + line.slope * (a + shift);
                    let yb = line.intercept + line.slope * (b + shift);
                    let _ = writeln!(
                        out,
                        r#"<line x1="{}" y1="{}" x2="{}" y2="{}"/>"#,
                        n(f.x(a)),
                        n(f.y(ya)),
                        n(f.x(b)),
                        n(f.y(yb))
                    );
                }
                let mid = start + line.span_days as f64 / 2.0;
                let mid_x = if mid > f.xmax { mid - 28.0 } else { mid };
                let mid_y = line.intercept + line.slope * mid;
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" stroke="none" fill="{}">{}</text>"#,
                    n(f.x(mid_x)),
                    n(f.y(mid_y) - 8.0),
                    p.text,
                    escape(&line.label)
                );
            }
            let _ = writeln!(out, "</g>");
        }
        Layer::TurningMarkers { markers } => {
            let _ = writeln!(out, r#"<g id="turning-markers">"#);
            for m in markers {
                let (x, y) = (f.x(m.day as f64), f.y(m.value));
                let (color, dy) = match m.kind {
                    TurningKind::Peak => (&p.peak, -10.0),
                    TurningKind::Trough => (&p.trough, 18.0),
                };
                let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="5" fill="{color}"/>"#, n(x), n(y));
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{color}">{}</text>"#,
                    n(x),
                    n(y + dy),
                    escape(&m.label)
                );
            }
            let _ = writeln!(out, "</g>");
        }
        Layer::Annotation { text } => {
            let _ = writeln!(
                out,
                r#"<text id="annotation" x="{}" y="{}" fill="{}">{}</text>"#,
                n(f.x0 + 8.0),
                n(f.y0 + 16.0),
                p.text,
                escape(text)
            );
        }
    }
}

fn check(width: u32, height: u32) -> Result<(), RenderError> {
    if width == 0 || height == 0 {
        return Err(RenderError::InvalidDimensions { width, height });
    }
    Ok(())
}

pub fn render_svg(model: &FigureModel, width: u32, height: u32) -> Result<String, RenderError> {
    check(width, height)?;
    let style = &model.style;
    let f = Frame::new(width, height, &model.x_axis, &model.y_axis);
    let mut out = String::new();
    header(&mut out, width, height, style);
    let _ = writeln!(
        out,
        r#"<text id="title" x="{}" y="22" text-anchor="middle" font-size="{}" fill="{}">{}</text>"#,
        n(width as f64 / 2.0),
        style.font_size + 2.0,
        style.palette.text,
        escape(&model.title)
    );
    for l in &model.layers {
        layer(&mut out, &f, l, style);
    }
    axes(&mut out, &f, &model.x_axis, &model.y_axis, style);
    legend(&mut out, &f, model);
    out.push_str("</svg>\n");
    Ok(out)
}

fn legend(out: &mut String, f: &Frame, model: &FigureModel) {
    let curves: Vec<(&String, &String, &Option<String>)> = model
        .layers
        .iter()
        .filter_map(|l| match l {
            Layer::Curve { label, color, note, .. } => Some((label, color, note)),
            _ => None,
        })
        .collect();
    if curves.len() < 2 {
        return;
    }
    let _ = writeln!(out, r#"<g id="legend">"#);
    for (i, (label, color, note)) in curves.iter().enumerate() {
        let y = f.y0 + 36.0 + i as f64 * 16.0;
        let x = f.x1 - 200.0;
        let (stroke, text) = match note {
            Some(reason) => ("#bbbbbb".to_string(), format!("{label}: {reason}")),
            None => (color.to_string(), label.to_string()),
        };
        let _ = writeln!(out, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{stroke}" stroke-width="2"/>"#, n(x), n(y), n(x + 18.0), n(y));
        let _ = writeln!(out, r#"<text x="{}" y="{}" fill="{stroke}">{}</text>"#, n(x + 24.0), n(y + 4.0), escape(&text));
    }
    let _ = writeln!(out, "</g>");
}

pub fn render_forest_svg(model: &ForestModel, width: u32, height: u32) -> Result<String, RenderError> {
    check(width, height)?;
    let style = &model.style;
    let p = &style.palette;
    let (xmin, xmax) = model
        .rows
        .iter()
        .fold((model.reference, model.reference), |(lo, hi), r| (lo.min(r.ci_low), hi.max(r.ci_high)));
    let pad = if xmax > xmin { (xmax - xmin) * 0.1 } else { 1.0 };
    let x_axis = Axis {
        label: model.x_label.clone(),
        min: xmin - pad,
        max: xmax + pad,
        ticks: (0..5).map(|i| xmin - pad + (xmax - xmin + 2.0 * pad) * i as f64 / 4.0).map(|v| (v * 1e4).round() / 1e4).collect(),
    };
    let y_axis = Axis { label: String::new(), min: 0.0, max: model.rows.len().max(1) as f64 + 1.0, ticks: Vec::new() };
    let mut f = Frame::new(width, height, &x_axis, &y_axis);
    f.x0 = 140.0;
    let mut out = String::new();
    header(&mut out, width, height, style);
    let _ = writeln!(
        out,
        r#"<text id="title" x="{}" y="22" text-anchor="middle" fill="{}">{}</text>"#,
        n(width as f64 / 2.0),
        p.text,
        escape(&model.title)
    );
    let _ = writeln!(
        out,
        r#"<line id="reference" x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="{3}" stroke-dasharray="4,3"/>"#,
        n(f.x(model.reference)),
        n(f.y0),
        n(f.y1),
        p.axis
    );
    let _ = writeln!(out, r#"<g id="forest-rows">"#);
    for (i, r) in model.rows.iter().enumerate() {
        let y = f.y((model.rows.len() - i) as f64);
        let color = if r.significant { &p.adjusted } else { &p.curve };
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="1.5"/>"#,
            n(f.x(r.ci_low)),
            n(y),
            n(f.x(r.ci_high)),
            n(y)
        );
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="8" height="8" fill="{color}"/>"#, n(f.x(r.point) - 4.0), n(y - 4.0));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end" fill="{}">{}</text>"#, n(f.x0 - 10.0), n(y + 4.0), p.text, escape(&r.label));
    }
    let _ = writeln!(out, "</g>");
    axes(&mut out, &f, &x_axis, &y_axis, style);
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::{value_axis, FigureModel};
    use super::*;

    #[test]
    fn zero_size_is_rejected() {
        let m = FigureModel::empty("t", value_axis([1.0]));
        assert_eq!(render_svg(&m, 0, 10), Err(RenderError::InvalidDimensions { width: 0, height: 10 }));
    }

    #[test]
    fn empty_model_draws_axes_only() {
        let m = FigureModel::empty("t", value_axis([99.0, 101.0]));
        let svg = render_svg(&m, 400, 300).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(r#"id="axes""#));
        assert!(!svg.contains("<path"));
    }

    #[test]
    fn wrapped_pieces_split_at_boundary() {
        assert_eq!(wrapped_pieces(4.0, 17.0, -14.0, 13.0), vec![(4.0, 13.0), (-14.0, -7.0)]);
        assert_eq!(wrapped_pieces(-7.0, 11.0, -14.0, 13.0), vec![(-7.0, 4.0)]);
    }

    #[test]
    fn text_is_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
