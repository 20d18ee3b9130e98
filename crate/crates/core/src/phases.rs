//! Turning points of the fitted curve and linear trends between them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::gam::{FourierFit, FourierSpec};
use crate::preprocess::{wrap_day, CycleDataset, CYCLE_SLOTS, MAX_CYCLE_DAY, MIN_CYCLE_DAY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseError {
    #[error("fitted curve is flat: no turning points")]
    FlatCurve,
    #[error("need at least 2 turning points, found {0}")]
    TooFewTurningPoints(usize),
    #[error("segment from day {start_day} to {end_day} has fewer than 2 days with data")]
    SegmentTooShort { start_day: i32, end_day: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurningKind {
    Peak,
    Trough,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurningPoint {
    pub day: i32,
    pub kind: TurningKind,
    /// Fitted value at the rounded day.
    pub fitted_value: f64,
    /// Refined root of the derivative before rounding.
    pub exact_day: f64,
}

const GRID_STEP: f64 = 0.01;
const ROOT_TOL: f64 = 1e-6;
const FLAT_TOL: f64 = 1e-12;

pub fn find_turning_points(fit: &FourierFit) -> Result<Vec<TurningPoint>, PhaseError> {
    turning_points_of(&fit.coefficients, &fit.spec)
}

/// Turning points of the curve with the given Fourier coefficients, rounded to
/// days. A peak and a trough that round to the same day are both reported.
pub fn turning_points_of(coefficients: &[f64], spec: &FourierSpec) -> Result<Vec<TurningPoint>, PhaseError> {
    if coefficients[1..].iter().all(|c| c.abs() < FLAT_TOL) {
        return Err(PhaseError::FlatCurve);
    }
    let period = spec.period;
    let lo = -period / 2.0;
    let steps = (period / GRID_STEP).round() as usize;
    let at = |i: usize| if i == steps { lo } else { lo + i as f64 * GRID_STEP };
    let deriv = |d: f64| spec.derivative(coefficients, d);

    let mut roots: Vec<(f64, TurningKind)> = Vec::new();
    let mut fa = deriv(at(0));
    for i in 0..steps {
        let fb = deriv(at(i + 1));
        let kind = if fa > 0.0 && fb <= 0.0 {
            Some(TurningKind::Peak)
        } else if fa < 0.0 && fb >= 0.0 {
            Some(TurningKind::Trough)
        } else {
            None
        };
        if let Some(kind) = kind {
            // bisect on the unwrapped interval so the last step ends at +P/2
            let (mut a, mut b) = (lo + i as f64 * GRID_STEP, lo + (i + 1) as f64 * GRID_STEP);
            let sa = fa > 0.0;
            while b - a > ROOT_TOL {
                let m = 0.5 * (a + b);
                if (deriv(m) > 0.0) == sa {
                    a = m;
                } else {
                    b = m;
                }
            }
            roots.push((0.5 * (a + b), kind));
        }
        fa = fb;
    }

    let mut points: Vec<(TurningPoint, f64)> = Vec::new();
    for (root, kind) in roots {
        let day = wrap_day(root.round() as i32);
        let curvature = spec.second_derivative(coefficients, root).abs();
        let tp = TurningPoint { day, kind, fitted_value: spec.evaluate(coefficients, day as f64), exact_day: root };
        match points.iter_mut().find(|(p, _)| p.day == day && p.kind == kind) {
            Some(existing) if curvature > existing.1 => *existing = (tp, curvature),
            Some(_) => {}
            None => points.push((tp, curvature)),
        }
    }
    let mut out: Vec<TurningPoint> = points.into_iter().map(|(p, _)| p).collect();
    out.sort_by_key(|p| p.day);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyMean {
    pub day: i32,
    pub mean: f64,
    pub n: usize,
}

/// Population mean of the normalised outcome on each cycle day with data.
pub fn daily_means(dataset: &CycleDataset) -> Vec<DailyMean> {
    let mut sums = vec![(0.0, 0usize); CYCLE_SLOTS as usize];
    for o in &dataset.observations {
        let s = &mut sums[(o.cycle_day.value() - MIN_CYCLE_DAY) as usize];
        s.0 += o.norm_value;
        s.1 += 1;
    }
    (MIN_CYCLE_DAY..=MAX_CYCLE_DAY)
        .zip(sums)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(day, (sum, n))| DailyMean { day, mean: sum / n as f64, n })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub start_day: i32,
    /// May be below `start_day` when the segment wraps past +13.
    pub end_day: i32,
    pub start_kind: TurningKind,
    /// Length in days on the unwrapped axis.
    pub span_days: i32,
    pub intercept: f64,
    /// Percent of individual mean per day.
    pub slope: f64,
    /// Absent when only two daily means are available (no residual df).
    pub slope_se: Option<f64>,
    pub p_value: Option<f64>,
    pub n_days: usize,
}

impl PhaseSegment {
    /// End of the segment on the unwrapped axis used for the regression.
    pub fn unwrapped_end(&self) -> i32 {
        self.start_day + self.span_days
    }
}

struct LineFit {
    intercept: f64,
    slope: f64,
    slope_se: Option<f64>,
    p_value: Option<f64>,
}

fn ols_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if x.len() <= 2 {
        return LineFit { intercept, slope, slope_se: None, p_value: None };
    }
    let df = n - 2.0;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (rss / df / sxx).sqrt();
    let p = if se == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = StudentsT::new(0.0, 1.0, df).expect("positive df");
        (2.0 * t.sf((slope / se).abs())).clamp(0.0, 1.0)
    };
    LineFit { intercept, slope, slope_se: Some(se), p_value: Some(p) }
}

/// Fits `mean = a + b·day` over the daily means of each span between
/// consecutive turning points. Endpoints belong to both adjacent segments.
pub fn fit_phase_models(dataset: &CycleDataset, turning_points: &[TurningPoint]) -> Result<Vec<PhaseSegment>, PhaseError> {
    segments_from_means(&daily_means(dataset), turning_points)
}

pub fn segments_from_means(means: &[DailyMean], turning_points: &[TurningPoint]) -> Result<Vec<PhaseSegment>, PhaseError> {
    if turning_points.len() < 2 {
        return Err(PhaseError::TooFewTurningPoints(turning_points.len()));
    }
    let lookup = |day: i32| means.iter().find(|m| m.day == wrap_day(day)).map(|m| m.mean);
    let mut out = Vec::with_capacity(turning_points.len());
    for (i, start) in turning_points.iter().enumerate() {
        let end = &turning_points[(i + 1) % turning_points.len()];
        let mut span = end.day - start.day;
        if span <= 0 {
            span += CYCLE_SLOTS;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = (start.day..=start.day + span)
            .filter_map(|d| lookup(d).map(|m| (d as f64, m)))
            .unzip();
        if x.len() < 2 {
            return Err(PhaseError::SegmentTooShort { start_day: start.day, end_day: end.day });
        }
        let line = ols_line(&x, &y);
        out.push(PhaseSegment {
            start_day: start.day,
            end_day: end.day,
            start_kind: start.kind,
            span_days: span,
            intercept: line.intercept,
            slope: line.slope,
            slope_se: line.slope_se,
            p_value: line.p_value,
            n_days: x.len(),
        });
    }
    Ok(out)
}
