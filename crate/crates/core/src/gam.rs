//! Cyclic Fourier regression of normalised outcome on cycle day.
//!
//! ```text
//! y = β₀ + Σₖ [β₂ₖ₋₁ sin(2πkd/P) + β₂ₖ cos(2πkd/P)] + ε,   k = 1..K
//! ```
//!
//! Fitted by QR least squares and tested against the intercept-only model with
//! an F-test on `2K` and `n − 2K − 1` degrees of freedom.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::ols::{self, Matrix, OlsError};
use crate::preprocess::{CycleDataset, CycleDay, MAX_CYCLE_DAY, MIN_CYCLE_DAY};
use crate::serde_float;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("too few observations: {n_obs} for {n_params} parameters")]
    TooFewObservations { n_obs: usize, n_params: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
}

impl From<OlsError> for FitError {
    fn from(_: OlsError) -> Self {
        FitError::RankDeficient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    #[serde(rename = "K")]
    pub n_harmonics: usize,
    pub period: f64,
}

impl Default for FourierSpec {
    fn default() -> Self {
        Self { n_harmonics: 2, period: 28.0 }
    }
}

impl FourierSpec {
    pub fn with_harmonics(n_harmonics: usize) -> Self {
        Self { n_harmonics, ..Self::default() }
    }

    pub fn n_params(&self) -> usize {
        2 * self.n_harmonics + 1
    }

    fn omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.period
    }

    /// `[1, sin₁, cos₁, …, sin_K, cos_K]` at day `d`.
    pub fn basis(&self, d: f64) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.n_params());
        row.push(1.0);
        for k in 1..=self.n_harmonics {
            let (s, c) = (self.omega(k) * d).sin_cos();
            row.push(s);
            row.push(c);
        }
        row
    }

    pub fn evaluate(&self, coefficients: &[f64], d: f64) -> f64 {
        self.basis(d).iter().zip(coefficients).map(|(b, c)| b * c).sum()
    }

    /// First derivative in `d`, by term-wise differentiation.
    pub fn derivative(&self, coefficients: &[f64], d: f64) -> f64 {
        (1..=self.n_harmonics)
            .map(|k| {
                let w = self.omega(k);
                let (s, c) = (w * d).sin_cos();
                w * (coefficients[2 * k - 1] * c - coefficients[2 * k] * s)
            })
            .sum()
    }

    pub fn second_derivative(&self, coefficients: &[f64], d: f64) -> f64 {
        (1..=self.n_harmonics)
            .map(|k| {
                let w = self.omega(k);
                let (s, c) = (w * d).sin_cos();
                -w * w * (coefficients[2 * k - 1] * s + coefficients[2 * k] * c)
            })
            .sum()
    }
}

/// Integer cycle days −14..=13 as reals.
pub fn day_grid() -> Vec<f64> {
    (MIN_CYCLE_DAY..=MAX_CYCLE_DAY).map(f64::from).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub spec: FourierSpec,
    pub matrix: Matrix,
}

pub fn build_design(days: &[CycleDay], spec: &FourierSpec) -> DesignMatrix {
    let real: Vec<f64> = days.iter().map(|d| d.value() as f64).collect();
    build_design_real(&real, spec)
}

pub fn build_design_real(days: &[f64], spec: &FourierSpec) -> DesignMatrix {
    let p = spec.n_params();
    let data = days.iter().flat_map(|d| spec.basis(*d)).collect();
    DesignMatrix { spec: *spec, matrix: Matrix::from_rows(days.len(), p, data) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFit {
    pub coefficients: Vec<f64>,
    pub rss: f64,
    pub rss_null: f64,
    #[serde(with = "serde_float")]
    pub f_stat: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
    #[serde(rename = "deviance_pct")]
    pub deviance_explained_pct: f64,
    #[serde(with = "serde_float")]
    pub aic: f64,
    pub n_obs: usize,
    #[serde(flatten)]
    pub spec: FourierSpec,
    #[serde(skip)]
    pub residuals: Vec<f64>,
}

impl FourierFit {
    /// Amplitude `√(β²₂ₖ₋₁ + β²₂ₖ)` of harmonic `k` (1-based).
    pub fn amplitude(&self, k: usize) -> f64 {
        self.coefficients[2 * k - 1].hypot(self.coefficients[2 * k])
    }
}

pub fn fit(dataset: &CycleDataset, spec: &FourierSpec) -> Result<FourierFit, FitError> {
    let days: Vec<f64> = dataset.observations.iter().map(|o| o.cycle_day.value() as f64).collect();
    fit_values(&days, &dataset.values(), spec)
}

pub fn fit_values(days: &[f64], y: &[f64], spec: &FourierSpec) -> Result<FourierFit, FitError> {
    let n = y.len();
    let p = spec.n_params();
    if n <= p {
        return Err(FitError::TooFewObservations { n_obs: n, n_params: p });
    }
    let design = build_design_real(days, spec);
    let ls = ols::solve(&design.matrix, y)?;
    Ok(summarise(ls.coefficients, ls.residuals, ls.rss, y, *spec))
}

/// Builds the test statistics for a fitted Fourier model.
pub(crate) fn summarise(coefficients: Vec<f64>, residuals: Vec<f64>, rss: f64, y: &[f64], spec: FourierSpec) -> FourierFit {
    let n = y.len();
    let p = spec.n_params();
    let mean = y.iter().sum::<f64>() / n as f64;
    let rss_null: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss = rss.min(rss_null);
    let q = 2 * spec.n_harmonics;
    let df_den = n - p;
    let explained = rss_null - rss;
    let (f_stat, p_value) = if explained <= 0.0 {
        (0.0, 1.0)
    } else if rss <= 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (explained / q as f64) / (rss / df_den as f64);
        let dist = FisherSnedecor::new(q as f64, df_den as f64).expect("positive degrees of freedom");
        (f, dist.sf(f).clamp(0.0, 1.0))
    };
    let deviance_explained_pct = if rss_null > 0.0 { explained / rss_null * 100.0 } else { 0.0 };
    let aic = n as f64 * (rss / n as f64).ln() + 2.0 * p as f64;
    FourierFit {
        coefficients,
        rss,
        rss_null,
        f_stat,
        df_num: q,
        df_den,
        p_value,
        deviance_explained_pct,
        aic,
        n_obs: n,
        spec,
        residuals,
    }
}

pub fn predict(fit: &FourierFit, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|d| fit.spec.evaluate(&fit.coefficients, *d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub sample: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayResiduals {
    pub day: i32,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample variance; present for days with at least two observations.
    pub variance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AicEntry {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(with = "serde_float")]
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsBundle {
    pub qq: Vec<QqPoint>,
    pub residuals_by_day: Vec<DayResiduals>,
    /// Refits over K = 1..=4 (plus the fitted K); orders that fail to fit are omitted.
    pub aic_by_k: Vec<AicEntry>,
}

impl DiagnosticsBundle {
    pub fn best_k(&self) -> Option<usize> {
        self.aic_by_k.iter().min_by(|a, b| a.aic.total_cmp(&b.aic)).map(|e| e.k)
    }
}

/// Sorted residuals against standard-normal quantiles at `i/(n+1)`.
pub fn qq_pairs(residuals: &[f64]) -> Vec<QqPoint> {
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let normal = Normal::standard();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, sample)| QqPoint { theoretical: normal.inverse_cdf((i + 1) as f64 / (n + 1) as f64), sample })
        .collect()
}

pub fn diagnostics(fit: &FourierFit, dataset: &CycleDataset) -> DiagnosticsBundle {
    let mut by_day: Vec<Vec<f64>> = vec![Vec::new(); (MAX_CYCLE_DAY - MIN_CYCLE_DAY + 1) as usize];
    for (o, r) in dataset.observations.iter().zip(&fit.residuals) {
        by_day[(o.cycle_day.value() - MIN_CYCLE_DAY) as usize].push(*r);
    }
    let residuals_by_day = by_day
        .iter()
        .enumerate()
        .map(|(i, rs)| {
            let n = rs.len();
            let mean = (n > 0).then(|| rs.iter().sum::<f64>() / n as f64);
            let variance = mean.filter(|_| n >= 2).map(|m| rs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64);
            DayResiduals { day: i as i32 + MIN_CYCLE_DAY, n, mean, variance }
        })
        .collect();

    let mut orders: Vec<usize> = (1..=4).collect();
    if !orders.contains(&fit.spec.n_harmonics) {
        orders.push(fit.spec.n_harmonics);
    }
    let aic_by_k = orders
        .par_iter()
        .filter_map(|&k| {
            if k == fit.spec.n_harmonics {
                return Some(AicEntry { k, aic: fit.aic });
            }
            let spec = FourierSpec { n_harmonics: k, ..fit.spec };
            self::fit(dataset, &spec).ok().map(|f| AicEntry { k, aic: f.aic })
        })
        .collect();

    DiagnosticsBundle { qq: qq_pairs(&fit.residuals), residuals_by_day, aic_by_k }
}
