//! Effect-modifier analysis: separate Fourier fits per user group.
//!
//! Continuous modifiers split users at nearest-rank quartiles into Low
//! (`v < q25`), Medium (`q25 ≤ v < q75`) and High (`v ≥ q75`). Categorical
//! modifiers get one group per distinct label.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gam::{self, day_grid, FourierFit, FourierSpec};
use crate::ingest::ConfounderTable;
use crate::preprocess::CycleDataset;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StratifyError {
    #[error("unknown modifier column '{0}'")]
    UnknownModifier(String),
    #[error("modifier '{0}' is not numeric and cannot be split into quartiles")]
    NotNumeric(String),
    #[error("modifier '{name}' has {distinct} distinct values; at least {required} are needed")]
    TooFewDistinctValues { name: String, distinct: usize, required: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrataKind {
    Categorical,
    Continuous,
}

impl StrataKind {
    /// Continuous for numeric columns, categorical otherwise.
    pub fn infer(table: &ConfounderTable, name: &str) -> StrataKind {
        if table.is_numeric(name) {
            StrataKind::Continuous
        } else {
            StrataKind::Categorical
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Membership {
    Below { upper: f64 },
    Between { lower: f64, upper: f64 },
    AtLeast { lower: f64 },
    Equals { value: String },
}

impl Membership {
    /// Boundary text shown next to the group label.
    pub fn describe(&self) -> String {
        match self {
            Membership::Below { upper } => format!("< {upper}"),
            Membership::Between { lower, upper } => format!("{lower} to < {upper}"),
            Membership::AtLeast { lower } => format!("≥ {lower}"),
            Membership::Equals { value } => format!("= {value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumGroup {
    pub label: String,
    pub membership: Membership,
    pub users: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataDefinition {
    pub modifier: String,
    pub kind: StrataKind,
    pub groups: Vec<StratumGroup>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
}

/// Nearest-rank quantile: the `⌈p·n⌉`-th smallest value.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64 - 1e-9).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn define_strata(table: &ConfounderTable, name: &str, kind: StrataKind) -> Result<StrataDefinition, StratifyError> {
    let idx = table.column_index(name).ok_or_else(|| StratifyError::UnknownModifier(name.to_string()))?;
    match kind {
        StrataKind::Continuous => {
            if !table.is_numeric(name) {
                return Err(StratifyError::NotNumeric(name.to_string()));
            }
            let values = table.numeric_values(name).expect("column exists");
            let mut sorted: Vec<f64> = values.values().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < 3 {
                return Err(StratifyError::TooFewDistinctValues { name: name.to_string(), distinct: distinct.len(), required: 3 });
            }
            let q25 = nearest_rank(&sorted, 0.25);
            let q75 = nearest_rank(&sorted, 0.75);
            let pick = |f: &dyn Fn(f64) -> bool| values.iter().filter(|(_, v)| f(**v)).map(|(u, _)| u.to_string()).collect();
            let groups = vec![
                StratumGroup { label: "Low".into(), membership: Membership::Below { upper: q25 }, users: pick(&|v| v < q25) },
                StratumGroup {
                    label: "Medium".into(),
                    membership: Membership::Between { lower: q25, upper: q75 },
                    users: pick(&|v| q25 <= v && v < q75),
                },
                StratumGroup { label: "High".into(), membership: Membership::AtLeast { lower: q75 }, users: pick(&|v| v >= q75) },
            ];
            Ok(StrataDefinition { modifier: name.to_string(), kind, groups, q25: Some(q25), q75: Some(q75) })
        }
        StrataKind::Categorical => {
            let mut by_label: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for (user, row) in &table.rows {
                if let Some(label) = row[idx].label() {
                    by_label.entry(label).or_default().push(user.clone());
                }
            }
            if by_label.is_empty() {
                return Err(StratifyError::TooFewDistinctValues { name: name.to_string(), distinct: 0, required: 1 });
            }
            let groups = by_label
                .into_iter()
                .map(|(label, users)| StratumGroup { membership: Membership::Equals { value: label.clone() }, label, users })
                .collect();
            Ok(StrataDefinition { modifier: name.to_string(), kind, groups, q25: None, q75: None })
        }
    }
}

/// Strata over the users present in `dataset` only.
pub fn define_strata_matched(
    dataset: &CycleDataset,
    table: &ConfounderTable,
    name: &str,
    kind: StrataKind,
) -> Result<StrataDefinition, StratifyError> {
    let mut restricted = ConfounderTable::new(table.columns.clone());
    for (user, row) in &table.rows {
        if dataset.user_means.contains_key(user) {
            restricted.insert(user.clone(), row.clone());
        }
    }
    define_strata(&restricted, name, kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumResult {
    pub label: String,
    pub membership: Membership,
    pub n_users: usize,
    pub n_obs: usize,
    pub fit: Option<FourierFit>,
    /// Fitted values on the −14..=13 grid.
    pub curve: Option<Vec<f64>>,
    pub unfit_reason: Option<String>,
}

impl StratumResult {
    pub fn is_fit(&self) -> bool {
        self.fit.is_some()
    }
}

pub fn fit_strata(dataset: &CycleDataset, strata: &StrataDefinition, spec: &FourierSpec) -> Vec<StratumResult> {
    let grid = day_grid();
    strata
        .groups
        .par_iter()
        .map(|g| {
            let members: BTreeSet<&str> = g.users.iter().map(String::as_str).collect();
            let subset = dataset.restrict_to(|u| members.contains(u));
            let base = StratumResult {
                label: g.label.clone(),
                membership: g.membership.clone(),
                n_users: subset.n_users,
                n_obs: subset.n_obs,
                fit: None,
                curve: None,
                unfit_reason: None,
            };
            if subset.n_users == 0 {
                return StratumResult { unfit_reason: Some("no users in stratum".into()), ..base };
            }
            match gam::fit(&subset, spec) {
                Ok(fit) => StratumResult { curve: Some(gam::predict(&fit, &grid)), fit: Some(fit), ..base },
                Err(e) => StratumResult { unfit_reason: Some(e.to_string()), ..base },
            }
        })
        .collect()
}
