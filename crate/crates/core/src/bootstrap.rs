//! User-level cluster bootstrap bands for the fitted cycle curve.
//!
//! Each resample draws users with replacement, renormalises every drawn copy
//! against its own mean, refits, and evaluates the curve on the grid. Resample
//! `b` uses its own ChaCha8 stream (`seed`, stream `b`), so the band does not
//! depend on how resamples are scheduled across threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gam::{self, day_grid, FourierSpec};
use crate::preprocess::{normalize_block, LabelledObservation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BootstrapError {
    #[error("bootstrap needs at least 2 users, got {0}")]
    InsufficientUsers(usize),
    #[error("all {0} bootstrap resamples failed to fit")]
    AllResamplesFailed(usize),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub grid: Vec<f64>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_samples: 200, seed: 0, ci_level: 0.95, grid: day_grid() }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), BootstrapError> {
        if self.n_samples < 2 {
            return Err(BootstrapError::InvalidConfig("n_samples must be ≥ 2".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(BootstrapError::InvalidConfig("ci_level must be in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub ci_level: f64,
    pub n_samples: usize,
    pub n_effective_samples: usize,
    pub n_failed: usize,
    /// 1-based ranks in the sorted successful resamples used as bounds.
    pub lower_rank: usize,
    pub upper_rank: usize,
    pub seed: u64,
    pub warning: Option<String>,
}

/// Ranks `(lo, hi)` (1-based, ascending) for a symmetric nearest-rank interval
/// over `n` sorted values.
pub fn percentile_ranks(n: usize, ci_level: f64) -> (usize, usize) {
    let alpha = (1.0 - ci_level) / 2.0;
    let lo = ((alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    (lo, n + 1 - lo)
}

struct UserBlock {
    days: Vec<f64>,
    raw: Vec<f64>,
}

fn user_blocks(obs: &[LabelledObservation]) -> Vec<UserBlock> {
    let mut by_user: BTreeMap<&str, UserBlock> = BTreeMap::new();
    for o in obs {
        let b = by_user.entry(&o.user_id).or_insert_with(|| UserBlock { days: Vec::new(), raw: Vec::new() });
        b.days.push(o.cycle_day.value() as f64);
        b.raw.push(o.raw_value);
    }
    by_user.into_values().collect()
}

fn resample_curve(blocks: &[UserBlock], spec: &FourierSpec, config: &BootstrapConfig, b: usize) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(b as u64);
    let mut days = Vec::new();
    let mut y = Vec::new();
    for _ in 0..blocks.len() {
        let block = &blocks[rng.random_range(0..blocks.len())];
        let (_, norm) = normalize_block(&block.raw)?;
        days.extend_from_slice(&block.days);
        y.extend(norm);
    }
    let fit = gam::fit_values(&days, &y, spec).ok()?;
    Some(gam::predict(&fit, &config.grid))
}

/// Bootstrap band from kept, labelled observations before normalisation.
pub fn bootstrap_band(
    obs: &[LabelledObservation],
    spec: &FourierSpec,
    config: &BootstrapConfig,
) -> Result<ConfidenceBand, BootstrapError> {
    config.validate()?;
    let blocks = user_blocks(obs);
    if blocks.len() < 2 {
        return Err(BootstrapError::InsufficientUsers(blocks.len()));
    }
    let curves: Vec<Option<Vec<f64>>> =
        (0..config.n_samples).into_par_iter().map(|b| resample_curve(&blocks, spec, config, b)).collect();
    let ok: Vec<&Vec<f64>> = curves.iter().flatten().collect();
    let n_ok = ok.len();
    if n_ok == 0 {
        return Err(BootstrapError::AllResamplesFailed(config.n_samples));
    }
    let (lo, hi) = percentile_ranks(n_ok, config.ci_level);
    let mut lower = Vec::with_capacity(config.grid.len());
    let mut upper = Vec::with_capacity(config.grid.len());
    let mut column = vec![0.0; n_ok];
    for g in 0..config.grid.len() {
        for (slot, curve) in column.iter_mut().zip(&ok) {
            *slot = curve[g];
        }
        column.sort_by(f64::total_cmp);
        lower.push(column[lo - 1]);
        upper.push(column[hi - 1]);
    }
    let n_failed = config.n_samples - n_ok;
    let warning = (n_ok * 5 < config.n_samples * 4).then(|| {
        format!("only {n_ok} of {} bootstrap resamples fitted successfully", config.n_samples)
    });
    Ok(ConfidenceBand {
        grid: config.grid.clone(),
        lower,
        upper,
        ci_level: config.ci_level,
        n_samples: config.n_samples,
        n_effective_samples: n_ok,
        n_failed,
        lower_rank: lo,
        upper_rank: hi,
        seed: config.seed,
        warning,
    })
}
