//! Built-in synthetic dataset with a known cycle waveform.
//!
//! Each user gets onsets spaced by cycle lengths drawn uniformly from
//! 26–30 days and `days_per_user` consecutive daily outcome values:
//!
//! ```text
//! value = 100 + offset_user + a1·sin(2πd/28) + a2·cos(4πd/28) + N(0, σ²)
//! ```
//!
//! where `d` is the signed day offset from the nearest onset (ties go to the
//! later onset). Defaults: a1 = 3, a2 = 1, σ = 5, offset sd = 10.

use std::f64::consts::PI;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_confounders, write_outcomes, write_periods, ConfounderTable, CovariateValue, PeriodRecord, RawObservation};

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleConfig {
    pub n_users: usize,
    pub days_per_user: usize,
    /// Amplitude of `sin(2πd/28)` in outcome units.
    pub a1: f64,
    /// Amplitude of `cos(4πd/28)` in outcome units.
    pub a2: f64,
    pub noise_sd: f64,
    pub user_offset_sd: f64,
    pub user_prefix: String,
}

impl Default for ExampleConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            days_per_user: 90,
            a1: 3.0,
            a2: 1.0,
            noise_sd: 5.0,
            user_offset_sd: 10.0,
            user_prefix: "user".into(),
        }
    }
}

impl ExampleConfig {
    /// The injected waveform (deviation from the user level) at cycle day `d`.
    pub fn waveform(&self, day: f64) -> f64 {
        self.a1 * (2.0 * PI * day / 28.0).sin() + self.a2 * (4.0 * PI * day / 28.0).cos()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleData {
    pub periods: Vec<PeriodRecord>,
    pub outcomes: Vec<RawObservation>,
    pub confounders: ConfounderTable,
}

pub const EXAMPLE_OUTCOME_NAME: &str = "value";

impl ExampleData {
    pub fn periods_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_periods(&self.periods, &mut buf).expect("in-memory write");
        buf
    }

    pub fn outcomes_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_outcomes(&self.outcomes, EXAMPLE_OUTCOME_NAME, &mut buf).expect("in-memory write");
        buf
    }

    pub fn confounders_csv(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        write_confounders(&self.confounders, &mut buf).expect("in-memory write");
        buf
    }
}

/// Signed offset from the nearest onset; equidistant ties resolve to the later one.
fn nearest_offset(date: NaiveDate, onsets: &[NaiveDate]) -> i64 {
    let mut best: Option<i64> = None;
    for onset in onsets {
        let a = (date - *onset).num_days();
        best = match best {
            None => Some(a),
            Some(b) if a.abs() < b.abs() || (a.abs() == b.abs() && a < b) => Some(a),
            keep => keep,
        };
    }
    best.unwrap_or(0)
}

pub fn generate_example(seed: u64, n_users: usize, days_per_user: usize) -> ExampleData {
    generate_example_with(&ExampleConfig { n_users, days_per_user, ..ExampleConfig::default() }, seed)
}

pub fn generate_example_with(config: &ExampleConfig, seed: u64) -> ExampleData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, config.noise_sd.max(0.0)).expect("finite sd");
    let offset = Normal::new(0.0, config.user_offset_sd.max(0.0)).expect("finite sd");
    let steps = Normal::<f64>::new(8000.0, 2500.0).expect("finite sd");
    let sleep = Normal::<f64>::new(7.0, 0.8).expect("finite sd");
    let base = NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date");

    let mut periods = Vec::new();
    let mut outcomes = Vec::new();
    let mut confounders = ConfounderTable::new(vec!["age".into(), "mean_steps".into(), "mean_sleep".into()]);
    let width = config.n_users.max(1).to_string().len().max(3);

    for u in 0..config.n_users {
        let user_id = format!("{}{:0width$}", config.user_prefix, u + 1);
        let start = base + Days::new(rng.random_range(0..60));
        let first = start - Days::new(rng.random_range(0..28));
        let horizon = start + Days::new(config.days_per_user as u64 + 14);
        let mut onsets = vec![first];
        while *onsets.last().expect("non-empty") <= horizon {
            let len = rng.random_range(26..=30);
            let next = *onsets.last().expect("non-empty") + Days::new(len);
            onsets.push(next);
        }
        let level = 100.0 + offset.sample(&mut rng);
        for t in 0..config.days_per_user {
            let date = start + Days::new(t as u64);
            let d = nearest_offset(date, &onsets) as f64;
            outcomes.push(RawObservation {
                user_id: user_id.clone(),
                obs_date: date,
                value: level + config.waveform(d) + noise.sample(&mut rng),
            });
        }
        let age = rng.random_range(18..=45) as f64;
        let mean_steps = steps.sample(&mut rng).max(1000.0).round();
        let mean_sleep = (sleep.sample(&mut rng).clamp(4.0, 10.0) * 100.0).round() / 100.0;
        confounders.insert(user_id.clone(), vec![
            CovariateValue::Number(age),
            CovariateValue::Number(mean_steps),
            CovariateValue::Number(mean_sleep),
        ]);
        periods.extend(onsets.into_iter().map(|onset_date| PeriodRecord { user_id: user_id.clone(), onset_date }));
    }
    ExampleData { periods, outcomes, confounders }
}
