//! User-level confounders entered additively alongside the Fourier basis.
//!
//! ```text
//! y = β₀ + Fourier terms(d) + Σⱼ γⱼ·Cᵢⱼ + ε
//! ```
//!
//! Each user's covariate value is broadcast to all of their observations.
//! Observations of users missing any requested covariate are dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::figures::{ForestModel, ForestRow};
use crate::gam::{self, build_design_real, day_grid, FitError, FourierFit, FourierSpec};
use crate::ingest::ConfounderTable;
use crate::ols::{self, Matrix};
use crate::preprocess::CycleDataset;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfoundError {
    #[error("unknown confounder column '{0}'")]
    UnknownConfounder(String),
    #[error("confounder '{0}' is not numeric")]
    NotNumeric(String),
    #[error("confounder '{0}' has zero variance among matched users")]
    ZeroVariance(String),
    #[error("no users in the dataset have values for the requested confounders")]
    NoMatchedUsers,
    #[error("confounder design is rank deficient (collinear confounders)")]
    RankDeficient,
    #[error("too few observations ({n_obs}) for {n_params} parameters")]
    TooFewObservations { n_obs: usize, n_params: usize },
}

impl From<FitError> for ConfoundError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::RankDeficient => ConfoundError::RankDeficient,
            FitError::TooFewObservations { n_obs, n_params } => ConfoundError::TooFewObservations { n_obs, n_params },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfounderEstimate {
    pub name: String,
    /// Percentage points of individual mean per unit of the confounder.
    pub gamma: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n_obs_used: usize,
    pub n_users_used: usize,
}

impl ConfounderEstimate {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Observations of users with every requested covariate, and those values.
struct Matched {
    days: Vec<f64>,
    y: Vec<f64>,
    /// Per observation, one value per confounder.
    covariates: Vec<Vec<f64>>,
    /// Per user, one value per confounder.
    user_values: BTreeMap<String, Vec<f64>>,
}

fn match_users(dataset: &CycleDataset, table: &ConfounderTable, names: &[String]) -> Result<Matched, ConfoundError> {
    let mut columns = Vec::with_capacity(names.len());
    for name in names {
        if table.column_index(name).is_none() {
            return Err(ConfoundError::UnknownConfounder(name.clone()));
        }
        if !table.is_numeric(name) {
            return Err(ConfoundError::NotNumeric(name.clone()));
        }
        columns.push(table.numeric_values(name).expect("column exists"));
    }
    let mut m = Matched { days: Vec::new(), y: Vec::new(), covariates: Vec::new(), user_values: BTreeMap::new() };
    for o in &dataset.observations {
        let values: Option<Vec<f64>> = columns.iter().map(|c| c.get(o.user_id.as_str()).copied()).collect();
        let Some(values) = values else { continue };
        m.user_values.entry(o.user_id.clone()).or_insert_with(|| values.clone());
        m.days.push(o.cycle_day.value() as f64);
        m.y.push(o.norm_value);
        m.covariates.push(values);
    }
    if m.user_values.is_empty() {
        return Err(ConfoundError::NoMatchedUsers);
    }
    for (j, name) in names.iter().enumerate() {
        let mut vals = m.user_values.values().map(|v| v[j]);
        let first = vals.next().expect("non-empty");
        if vals.all(|v| v == first) {
            return Err(ConfoundError::ZeroVariance(name.clone()));
        }
    }
    Ok(m)
}

/// Joint fit of the Fourier basis plus confounder columns.
struct AugmentedFit {
    coefficients: Vec<f64>,
    std_errors: Vec<f64>,
    df_resid: usize,
    rss: f64,
}

fn fit_augmented(m: &Matched, spec: &FourierSpec) -> Result<AugmentedFit, ConfoundError> {
    let base = build_design_real(&m.days, spec).matrix;
    let j = m.covariates.first().map_or(0, Vec::len);
    let p = base.cols() + j;
    let n = m.y.len();
    if n <= p {
        return Err(ConfoundError::TooFewObservations { n_obs: n, n_params: p });
    }
    let mut x = Matrix::zeros(n, p);
    for i in 0..n {
        for (c, v) in base.row(i).iter().chain(&m.covariates[i]).enumerate() {
            x.set(i, c, *v);
        }
    }
    let ls = ols::solve(&x, &m.y).map_err(|_| ConfoundError::RankDeficient)?;
    let df_resid = n - p;
    let sigma2 = ls.rss / df_resid as f64;
    let std_errors = ls.unscaled_variances().iter().map(|v| (v * sigma2).sqrt()).collect();
    Ok(AugmentedFit { coefficients: ls.coefficients, std_errors, df_resid, rss: ls.rss })
}

fn estimates(fit: &AugmentedFit, names: &[String], spec: &FourierSpec, m: &Matched) -> Vec<ConfounderEstimate> {
    let t = StudentsT::new(0.0, 1.0, fit.df_resid as f64).expect("positive df");
    let crit = t.inverse_cdf(0.975);
    names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let idx = spec.n_params() + j;
            let gamma = fit.coefficients[idx];
            let se = fit.std_errors[idx];
            let p_value = if se > 0.0 {
                (2.0 * t.sf((gamma / se).abs())).clamp(0.0, 1.0)
            } else if gamma == 0.0 {
                1.0
            } else {
                0.0
            };
            ConfounderEstimate {
                name: name.clone(),
                gamma,
                std_error: se,
                ci_low: gamma - crit * se,
                ci_high: gamma + crit * se,
                p_value,
                n_obs_used: m.y.len(),
                n_users_used: m.user_values.len(),
            }
        })
        .collect()
}

/// Effect of one confounder adjusted for the Fourier terms, with a classical
/// t-based 95% interval on `n − p − 1` df.
pub fn estimate_confounder(
    dataset: &CycleDataset,
    confounders: &ConfounderTable,
    name: &str,
    spec: &FourierSpec,
) -> Result<ConfounderEstimate, ConfoundError> {
    let names = [name.to_string()];
    let m = match_users(dataset, confounders, &names)?;
    let fit = fit_augmented(&m, spec)?;
    Ok(estimates(&fit, &names, spec, &m).remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedCurve {
    pub grid: Vec<f64>,
    /// Fourier part plus `Σ γⱼ·mean(Cⱼ)`.
    pub adjusted: Vec<f64>,
    /// Plain Fourier fit on the same observations.
    pub unadjusted: Vec<f64>,
    /// Unweighted means over distinct users in the analysis set.
    pub confounder_means: BTreeMap<String, f64>,
    pub estimates: Vec<ConfounderEstimate>,
    pub coefficients: Vec<f64>,
    pub unadjusted_coefficients: Vec<f64>,
    pub rss: f64,
    pub unadjusted_rss: f64,
    pub n_obs_used: usize,
    pub n_users_used: usize,
}

/// Joint model with every named confounder; predictions hold them at their
/// population means.
pub fn fit_adjusted(
    dataset: &CycleDataset,
    confounders: &ConfounderTable,
    names: &[String],
    spec: &FourierSpec,
) -> Result<AdjustedCurve, ConfoundError> {
    let grid = day_grid();
    let m = match_users(dataset, confounders, names)?;
    let plain: FourierFit = gam::fit_values(&m.days, &m.y, spec)?;
    let unadjusted = gam::predict(&plain, &grid);
    if names.is_empty() {
        return Ok(AdjustedCurve {
            adjusted: unadjusted.clone(),
            unadjusted,
            grid,
            confounder_means: BTreeMap::new(),
            estimates: Vec::new(),
            coefficients: plain.coefficients.clone(),
            unadjusted_coefficients: plain.coefficients,
            rss: plain.rss,
            unadjusted_rss: plain.rss,
            n_obs_used: m.y.len(),
            n_users_used: m.user_values.len(),
        });
    }
    let fit = fit_augmented(&m, spec)?;
    let n_users = m.user_values.len() as f64;
    let means: Vec<f64> = (0..names.len()).map(|j| m.user_values.values().map(|v| v[j]).sum::<f64>() / n_users).collect();
    let p = spec.n_params();
    let shift: f64 = means.iter().enumerate().map(|(j, mean)| fit.coefficients[p + j] * mean).sum();
    let adjusted = grid.iter().map(|d| spec.evaluate(&fit.coefficients[..p], *d) + shift).collect();
    Ok(AdjustedCurve {
        grid,
        adjusted,
        unadjusted,
        confounder_means: names.iter().cloned().zip(means).collect(),
        estimates: estimates(&fit, names, spec, &m),
        coefficients: fit.coefficients.clone(),
        unadjusted_coefficients: plain.coefficients,
        rss: fit.rss,
        unadjusted_rss: plain.rss,
        n_obs_used: m.y.len(),
        n_users_used: m.user_values.len(),
    })
}

pub fn forest_data(estimates: &[ConfounderEstimate]) -> ForestModel {
    ForestModel::new(
        estimates
            .iter()
            .map(|e| ForestRow {
                label: e.name.clone(),
                point: e.gamma,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                p_value: e.p_value,
                significant: e.excludes_zero(),
            })
            .collect(),
    )
}

/// One row of the confounder results table, formatted for display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table4Row {
    pub outcome: String,
    pub confounder: String,
    pub coefficient: String,
    pub ci_95: String,
    pub p_value: String,
}

/// `snake_case` column name to sentence case: `mean_steps` → `Mean steps`.
pub fn display_name(column: &str) -> String {
    let spaced = column.replace('_', " ");
    let mut chars = spaced.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Fixed 4 decimals, keeping the sign of values that round to zero.
pub fn format_coefficient(v: f64) -> String {
    let s = format!("{v:.4}");
    if v < 0.0 && !s.starts_with('-') {
        format!("-{s}")
    } else {
        s
    }
}

/// `[lo, hi]` at 3 decimals, widened until neither nonzero bound displays as zero.
pub fn format_ci(lo: f64, hi: f64) -> String {
    let shows_zero = |v: f64, dp: usize| v != 0.0 && format!("{:.*}", dp, v.abs()).chars().all(|c| c == '0' || c == '.');
    let mut dp = 3;
    while dp < 10 && (shows_zero(lo, dp) || shows_zero(hi, dp)) {
        dp += 1;
    }
    format!("[{}, {}]", format_signed(lo, dp), format_signed(hi, dp))
}

fn format_signed(v: f64, dp: usize) -> String {
    let s = format!("{v:.dp$}");
    if v < 0.0 && !s.starts_with('-') {
        format!("-{s}")
    } else {
        s
    }
}

pub fn format_p_2dp(p: f64) -> String {
    if p < 0.005 {
        "<0.01".into()
    } else {
        format!("{p:.2}")
    }
}

pub fn table4_row(outcome: &str, e: &ConfounderEstimate) -> Table4Row {
    Table4Row {
        outcome: outcome.to_string(),
        confounder: display_name(&e.name),
        coefficient: format_coefficient(e.gamma),
        ci_95: format_ci(e.ci_low, e.ci_high),
        p_value: format_p_2dp(e.p_value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::CovariateValue;
    use crate::preprocess::{CycleDay, Observation};
    use chrono::NaiveDate;

    fn dataset(users: usize) -> CycleDataset {
        let mut ds = CycleDataset::default();
        for u in 0..users {
            for d in -14..=13 {
                let wobble = ((u * 7 + (d + 14) as usize * 3) % 11) as f64 - 5.0;
                ds.observations.push(Observation {
                    user_id: format!("u{u}"),
                    obs_date: NaiveDate::from_ymd_opt(2024, 1, 15).unwrap() + chrono::Duration::days(d as i64),
                    cycle_day: CycleDay::new(d).unwrap(),
                    raw_value: 0.0,
                    norm_value: 100.0 + 2.0 * (d as f64 * std::f64::consts::PI / 14.0).sin() + wobble,
                });
            }
            ds.user_means.insert(format!("u{u}"), 1.0);
        }
        ds.n_users = users;
        ds.n_obs = ds.observations.len();
        ds
    }

    fn table(cols: &[&str], f: impl Fn(usize, usize) -> CovariateValue, users: usize) -> ConfounderTable {
        let mut t = ConfounderTable::new(cols.iter().map(|c| c.to_string()).collect());
        for u in 0..users {
            t.insert(format!("u{u}"), (0..cols.len()).map(|j| f(u, j)).collect());
        }
        t
    }

    #[test]
    fn constant_confounder_rejected() {
        let t = table(&["age"], |_, _| CovariateValue::Number(30.0), 5);
        assert_eq!(
            estimate_confounder(&dataset(5), &t, "age", &FourierSpec::default()),
            Err(ConfoundError::ZeroVariance("age".into()))
        );
    }

    #[test]
    fn missing_values_are_listwise_deleted() {
        let t = table(
            &["age"],
            |u, _| if u == 0 { CovariateValue::Missing } else { CovariateValue::Number(20.0 + u as f64) },
            6,
        );
        let e = estimate_confounder(&dataset(6), &t, "age", &FourierSpec::default()).unwrap();
        assert_eq!(e.n_users_used, 5);
        assert_eq!(e.n_obs_used, 5 * 28);
        assert!(e.ci_low <= e.gamma && e.gamma <= e.ci_high);
    }

    #[test]
    fn no_names_reproduces_plain_fit() {
        let ds = dataset(4);
        let t = table(&["age"], |u, _| CovariateValue::Number(u as f64), 4);
        let adj = fit_adjusted(&ds, &t, &[], &FourierSpec::default()).unwrap();
        let plain = gam::fit(&ds, &FourierSpec::default()).unwrap();
        for (a, b) in adj.coefficients.iter().zip(&plain.coefficients) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(adj.adjusted, adj.unadjusted);
    }

    #[test]
    fn duplicated_columns_are_rank_deficient() {
        let t = table(&["a", "b"], |u, _| CovariateValue::Number((u * u) as f64), 6);
        assert_eq!(
            fit_adjusted(&dataset(6), &t, &["a".into(), "b".into()], &FourierSpec::default()),
            Err(ConfoundError::RankDeficient)
        );
    }

    #[test]
    fn shift_invariance() {
        let ds = dataset(7);
        let spec = FourierSpec::default();
        let t0 = table(&["x"], |u, _| CovariateValue::Number((u % 3) as f64 + u as f64 * 0.5), 7);
        let t1 = table(&["x"], |u, _| CovariateValue::Number((u % 3) as f64 + u as f64 * 0.5 + 1000.0), 7);
        let a = fit_adjusted(&ds, &t0, &["x".into()], &spec).unwrap();
        let b = fit_adjusted(&ds, &t1, &["x".into()], &spec).unwrap();
        assert!((a.estimates[0].gamma - b.estimates[0].gamma).abs() < 1e-8);
        for (x, y) in a.adjusted.iter().zip(&b.adjusted) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(a.rss <= a.unadjusted_rss + 1e-9);
    }

    #[test]
    fn unknown_and_categorical_columns() {
        let t = table(&["site"], |u, _| CovariateValue::Label(format!("s{}", u % 2)), 4);
        let spec = FourierSpec::default();
        assert_eq!(estimate_confounder(&dataset(4), &t, "age", &spec), Err(ConfoundError::UnknownConfounder("age".into())));
        assert_eq!(estimate_confounder(&dataset(4), &t, "site", &spec), Err(ConfoundError::NotNumeric("site".into())));
        let other = table(&["age"], |u, _| CovariateValue::Number(u as f64), 4);
        let mut renamed = ConfounderTable::new(other.columns.clone());
        for (u, r) in other.rows {
            renamed.insert(format!("x{u}"), r);
        }
        assert_eq!(estimate_confounder(&dataset(4), &renamed, "age", &spec), Err(ConfoundError::NoMatchedUsers));
    }

    #[test]
    fn table4_formatting() {
        assert_eq!(format_coefficient(0.0007), "0.0007");
        assert_eq!(format_coefficient(-0.00001), "-0.0000");
        assert_eq!(format_ci(-0.036, 0.038), "[-0.036, 0.038]");
        assert_eq!(format_ci(-0.00012, 0.00009), "[-0.0001, 0.0001]");
        assert_eq!(format_p_2dp(0.97), "0.97");
        assert_eq!(format_p_2dp(0.999), "1.00");
        assert_eq!(display_name("mean_steps"), "Mean steps");
    }

    #[test]
    fn forest_rows_keep_order_and_flag_zero_crossing() {
        let e = |name: &str, lo: f64, hi: f64| ConfounderEstimate {
            name: name.into(),
            gamma: (lo + hi) / 2.0,
            std_error: 1.0,
            ci_low: lo,
            ci_high: hi,
            p_value: 0.5,
            n_obs_used: 1,
            n_users_used: 1,
        };
        let f = forest_data(&[e("c", -1.0, 1.0), e("a", 0.5, 2.0), e("b", -3.0, -1.0)]);
        assert_eq!(f.rows.iter().map(|r| r.label.as_str()).collect::<Vec<_>>(), vec!["c", "a", "b"]);
        assert_eq!(f.rows.iter().map(|r| r.significant).collect::<Vec<_>>(), vec![false, true, true]);
        assert_eq!(f.reference, 0.0);
    }
}
