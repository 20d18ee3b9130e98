//! Cycle construction, cycle-day labelling, quality filtering and
//! within-person normalisation.
//!
//! The stages run in a fixed order: build cycles, filter cycles by length,
//! label observations, filter users by phase coverage, normalise. The user
//! mean used for normalisation is taken over the observations that survive
//! every filter.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::ingest::{PeriodRecord, RawObservation};

pub const MIN_CYCLE_DAY: i32 = -14;
pub const MAX_CYCLE_DAY: i32 = 13;
/// Number of slots on the centred cycle-day scale.
pub const CYCLE_SLOTS: i32 = MAX_CYCLE_DAY - MIN_CYCLE_DAY + 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PreprocessError {
    #[error("invalid cycle length bounds: min {min} > max {max}")]
    InvalidBounds { min: i64, max: i64 },
    #[error("user '{0}' has a mean outcome of zero and cannot be normalised")]
    ZeroUserMean(String),
}

/// Position relative to the nearest onset on the centred −14..=13 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct CycleDay(i8);

impl CycleDay {
    pub fn new(value: i32) -> Option<Self> {
        (MIN_CYCLE_DAY..=MAX_CYCLE_DAY).contains(&value).then_some(CycleDay(value as i8))
    }

    pub fn value(self) -> i32 {
        self.0 as i32
    }

    /// Day 0 onwards counts as the post-onset phase.
    pub fn is_pre_onset(self) -> bool {
        self.0 < 0
    }

    pub fn all() -> impl Iterator<Item = CycleDay> {
        (MIN_CYCLE_DAY..=MAX_CYCLE_DAY).map(|d| CycleDay(d as i8))
    }
}

impl TryFrom<i32> for CycleDay {
    type Error = String;
    fn try_from(v: i32) -> Result<Self, String> {
        CycleDay::new(v).ok_or_else(|| format!("cycle day {v} outside [{MIN_CYCLE_DAY}, {MAX_CYCLE_DAY}]"))
    }
}

impl From<CycleDay> for i32 {
    fn from(d: CycleDay) -> i32 {
        d.value()
    }
}

/// Maps any integer day onto the canonical −14..=13 representative.
pub fn wrap_day(day: i32) -> i32 {
    (day - MIN_CYCLE_DAY).rem_euclid(CYCLE_SLOTS) + MIN_CYCLE_DAY
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cycle {
    pub user_id: String,
    pub start: NaiveDate,
    /// Day before the next onset.
    pub end: NaiveDate,
    pub length_days: i64,
}

impl Cycle {
    fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleExclusion {
    TooShort,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedCycle {
    pub cycle: Cycle,
    pub reason: CycleExclusion,
}

/// One cycle per consecutive onset pair. Input must be sorted by
/// `(user_id, onset_date)`, as `parse_periods` returns it.
pub fn build_cycles(periods: &[PeriodRecord]) -> Vec<Cycle> {
    periods
        .windows(2)
        .filter(|w| w[0].user_id == w[1].user_id && w[0].onset_date < w[1].onset_date)
        .map(|w| {
            let length_days = (w[1].onset_date - w[0].onset_date).num_days();
            Cycle {
                user_id: w[0].user_id.clone(),
                start: w[0].onset_date,
                end: w[1].onset_date.pred_opt().expect("date after minimum"),
                length_days,
            }
        })
        .collect()
}

/// Keeps cycles with `min_len <= length <= max_len`.
pub fn filter_cycles(
    cycles: &[Cycle],
    min_len: i64,
    max_len: i64,
) -> Result<(Vec<Cycle>, Vec<ExcludedCycle>), PreprocessError> {
    if min_len > max_len {
        return Err(PreprocessError::InvalidBounds { min: min_len, max: max_len });
    }
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for c in cycles {
        if c.length_days < min_len {
            excluded.push(ExcludedCycle { cycle: c.clone(), reason: CycleExclusion::TooShort });
        } else if c.length_days > max_len {
            excluded.push(ExcludedCycle { cycle: c.clone(), reason: CycleExclusion::TooLong });
        } else {
            kept.push(c.clone());
        }
    }
    Ok((kept, excluded))
}

/// Signed day offset from the nearest onset, or `None` when that offset falls
/// outside −14..=13. A date equidistant from two onsets belongs to the later
/// one. `onsets` must be sorted and non-empty.
pub fn label_cycle_day(obs_date: NaiveDate, onsets: &[NaiveDate]) -> Option<CycleDay> {
    let idx = onsets.partition_point(|o| *o <= obs_date);
    let after_prev = idx.checked_sub(1).map(|i| (obs_date - onsets[i]).num_days());
    let before_next = onsets.get(idx).map(|o| (*o - obs_date).num_days());
    let offset = match (after_prev, before_next) {
        (Some(a), Some(b)) if b <= a => -b,
        (Some(a), _) => a,
        (None, Some(b)) => -b,
        (None, None) => return None,
    };
    i32::try_from(offset).ok().and_then(CycleDay::new)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledObservation {
    pub user_id: String,
    pub obs_date: NaiveDate,
    pub cycle_day: CycleDay,
    pub raw_value: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTally {
    pub input: usize,
    pub labelled: usize,
    pub unassigned: usize,
    pub excluded_by_cycle: usize,
    pub no_period_data: usize,
}

#[derive(Default)]
struct UserCycles<'a> {
    onsets: Vec<NaiveDate>,
    kept: Vec<&'a Cycle>,
    excluded: Vec<&'a Cycle>,
    first_kept: bool,
    last_kept: bool,
}

enum Placement {
    Allowed,
    ExcludedCycle,
}

impl UserCycles<'_> {
    fn place(&self, date: NaiveDate) -> Placement {
        if self.excluded.iter().any(|c| c.contains(date)) {
            return Placement::ExcludedCycle;
        }
        let first = self.onsets[0];
        let last = *self.onsets.last().expect("non-empty");
        let edge_ok = if date < first {
            self.first_kept
        } else if date >= last {
            self.last_kept
        } else {
            true
        };
        if edge_ok {
            Placement::Allowed
        } else {
            Placement::ExcludedCycle
        }
    }
}

/// Assigns cycle days to raw observations.
///
/// Observations inside an excluded cycle are dropped. Observations before a
/// user's first onset or after their last are labelled only when the cycle
/// adjoining that onset was kept (or the user has no complete cycles).
pub fn label_observations(
    outcomes: &[RawObservation],
    periods: &[PeriodRecord],
    kept: &[Cycle],
    excluded: &[ExcludedCycle],
) -> (Vec<LabelledObservation>, LabelTally) {
    let mut users: BTreeMap<&str, UserCycles> = BTreeMap::new();
    for p in periods {
        users.entry(p.user_id.as_str()).or_default().onsets.push(p.onset_date);
    }
    for c in kept {
        users.entry(c.user_id.as_str()).or_default().kept.push(c);
    }
    for e in excluded {
        users.entry(e.cycle.user_id.as_str()).or_default().excluded.push(&e.cycle);
    }
    for uc in users.values_mut() {
        uc.onsets.sort();
        uc.onsets.dedup();
        let Some(&first) = uc.onsets.first() else { continue };
        let last = *uc.onsets.last().expect("non-empty");
        let has_cycles = !(uc.kept.is_empty() && uc.excluded.is_empty());
        uc.first_kept = !has_cycles || uc.kept.iter().any(|c| c.start == first);
        uc.last_kept = !has_cycles || uc.kept.iter().any(|c| c.end.succ_opt() == Some(last));
    }

    let mut tally = LabelTally { input: outcomes.len(), ..LabelTally::default() };
    let mut labelled = Vec::new();
    for obs in outcomes {
        let Some(uc) = users.get(obs.user_id.as_str()).filter(|u| !u.onsets.is_empty()) else {
            tally.no_period_data += 1;
            continue;
        };
        match uc.place(obs.obs_date) {
            Placement::ExcludedCycle => tally.excluded_by_cycle += 1,
            Placement::Allowed => match label_cycle_day(obs.obs_date, &uc.onsets) {
                Some(day) => {
                    tally.labelled += 1;
                    labelled.push(LabelledObservation {
                        user_id: obs.user_id.clone(),
                        obs_date: obs.obs_date,
                        cycle_day: day,
                        raw_value: obs.value,
                    });
                }
                None => tally.unassigned += 1,
            },
        }
    }
    labelled.sort_by(|a, b| (&a.user_id, a.obs_date).cmp(&(&b.user_id, b.obs_date)));
    (labelled, tally)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserExclusion {
    pub user_id: String,
    pub pre_onset_obs: usize,
    pub post_onset_obs: usize,
}

/// Keeps users with at least `min_per_phase` observations on negative days and
/// at least `min_per_phase` on days ≥ 0.
pub fn filter_users(
    obs: Vec<LabelledObservation>,
    min_per_phase: usize,
) -> (Vec<LabelledObservation>, Vec<UserExclusion>) {
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for o in &obs {
        let c = counts.entry(o.user_id.clone()).or_default();
        if o.cycle_day.is_pre_onset() {
            c.0 += 1;
        } else {
            c.1 += 1;
        }
    }
    let exclusions: Vec<UserExclusion> = counts
        .iter()
        .filter(|(_, (pre, post))| *pre < min_per_phase || *post < min_per_phase)
        .map(|(u, (pre, post))| UserExclusion { user_id: u.clone(), pre_onset_obs: *pre, post_onset_obs: *post })
        .collect();
    let kept = obs
        .into_iter()
        .filter(|o| exclusions.binary_search_by(|e| e.user_id.as_str().cmp(&o.user_id)).is_err())
        .collect();
    (kept, exclusions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub user_id: String,
    pub obs_date: NaiveDate,
    pub cycle_day: CycleDay,
    pub raw_value: f64,
    /// Percent of the user's mean over their included observations.
    pub norm_value: f64,
}

/// Filtered, labelled, normalised observations: the input to every model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleDataset {
    pub observations: Vec<Observation>,
    pub n_users: usize,
    pub n_obs: usize,
    pub user_means: BTreeMap<String, f64>,
}

impl CycleDataset {
    pub fn days(&self) -> Vec<CycleDay> {
        self.observations.iter().map(|o| o.cycle_day).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.norm_value).collect()
    }

    /// Observations restricted to the given users, keeping stored normalised
    /// values (normalisation is per user, so subsetting users leaves it valid).
    pub fn restrict_to<F: Fn(&str) -> bool>(&self, keep: F) -> CycleDataset {
        let observations: Vec<Observation> =
            self.observations.iter().filter(|o| keep(&o.user_id)).cloned().collect();
        let user_means: BTreeMap<String, f64> =
            self.user_means.iter().filter(|(u, _)| keep(u)).map(|(u, m)| (u.clone(), *m)).collect();
        CycleDataset { n_users: user_means.len(), n_obs: observations.len(), observations, user_means }
    }
}

/// Mean of `raw` and each value as a percent of it; `None` when the mean is 0.
pub(crate) fn normalize_block(raw: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if mean == 0.0 || !mean.is_finite() {
        return None;
    }
    Some((mean, raw.iter().map(|v| v / mean * 100.0).collect()))
}

/// Expresses each value as a percentage of its user's mean.
pub fn normalize(obs: &[LabelledObservation]) -> Result<CycleDataset, PreprocessError> {
    let mut by_user: BTreeMap<&str, Vec<&LabelledObservation>> = BTreeMap::new();
    for o in obs {
        by_user.entry(o.user_id.as_str()).or_default().push(o);
    }
    let mut observations = Vec::with_capacity(obs.len());
    let mut user_means = BTreeMap::new();
    for (user, rows) in by_user {
        let raw: Vec<f64> = rows.iter().map(|o| o.raw_value).collect();
        let (mean, norm) = normalize_block(&raw).ok_or_else(|| PreprocessError::ZeroUserMean(user.to_string()))?;
        user_means.insert(user.to_string(), mean);
        observations.extend(rows.iter().zip(norm).map(|(o, norm_value)| Observation {
            user_id: o.user_id.clone(),
            obs_date: o.obs_date,
            cycle_day: o.cycle_day,
            raw_value: o.raw_value,
            norm_value,
        }));
    }
    Ok(CycleDataset { n_users: user_means.len(), n_obs: observations.len(), observations, user_means })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_cycle_len: i64,
    pub max_cycle_len: i64,
    pub min_obs_per_phase: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { min_cycle_len: 21, max_cycle_len: 35, min_obs_per_phase: 5 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleTally {
    pub total: usize,
    pub kept: usize,
    pub excluded_short: usize,
    pub excluded_long: usize,
}

/// Where every input observation ended up; the fields other than `input`
/// sum to `input`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationTally {
    pub input: usize,
    pub kept: usize,
    pub unassigned: usize,
    pub excluded_by_cycle: usize,
    pub excluded_by_user: usize,
    pub no_period_data: usize,
}

impl ObservationTally {
    pub fn is_conserved(&self) -> bool {
        self.kept + self.unassigned + self.excluded_by_cycle + self.excluded_by_user + self.no_period_data == self.input
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTally {
    pub with_outcomes: usize,
    pub with_periods: usize,
    pub labelled: usize,
    pub kept: usize,
    pub excluded_insufficient_phase: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl ValueSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let min = v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { n, mean, sd, min, max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateCoverage {
    pub first: NaiveDate,
    pub last: NaiveDate,
    pub span_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaSummary {
    /// Length in days → number of cycles, over every built cycle.
    pub cycle_length_histogram: BTreeMap<i64, usize>,
    pub cycle_length_summary: Option<ValueSummary>,
    pub cycles: CycleTally,
    pub observations: ObservationTally,
    pub users: UserTally,
    pub user_exclusions: Vec<UserExclusion>,
    /// Kept observations per user.
    pub per_user_obs: BTreeMap<String, usize>,
    /// Kept observations per cycle day.
    pub per_day_obs: BTreeMap<i32, usize>,
    pub date_coverage: Option<DateCoverage>,
    pub raw_outcome_summary: Option<ValueSummary>,
}

/// Every intermediate product of the preprocessing stages.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub cycles: Vec<Cycle>,
    pub kept_cycles: Vec<Cycle>,
    pub excluded_cycles: Vec<ExcludedCycle>,
    pub label_tally: LabelTally,
    pub user_exclusions: Vec<UserExclusion>,
    /// Observations of kept users before normalisation.
    pub labelled: Vec<LabelledObservation>,
    pub dataset: CycleDataset,
}

pub fn run(
    periods: &[PeriodRecord],
    outcomes: &[RawObservation],
    config: &FilterConfig,
) -> Result<Preprocessed, PreprocessError> {
    let cycles = build_cycles(periods);
    let (kept_cycles, excluded_cycles) = filter_cycles(&cycles, config.min_cycle_len, config.max_cycle_len)?;
    let (labelled, label_tally) = label_observations(outcomes, periods, &kept_cycles, &excluded_cycles);
    let (labelled, user_exclusions) = filter_users(labelled, config.min_obs_per_phase);
    let dataset = normalize(&labelled)?;
    Ok(Preprocessed { cycles, kept_cycles, excluded_cycles, label_tally, user_exclusions, labelled, dataset })
}

pub fn compute_eda(periods: &[PeriodRecord], outcomes: &[RawObservation], pre: &Preprocessed) -> EdaSummary {
    let mut cycle_length_histogram = BTreeMap::new();
    for c in &pre.cycles {
        *cycle_length_histogram.entry(c.length_days).or_insert(0) += 1;
    }
    let count = |reason| pre.excluded_cycles.iter().filter(|e| e.reason == reason).count();
    let cycles = CycleTally {
        total: pre.cycles.len(),
        kept: pre.kept_cycles.len(),
        excluded_short: count(CycleExclusion::TooShort),
        excluded_long: count(CycleExclusion::TooLong),
    };

    let excluded_by_user = pre.label_tally.labelled - pre.labelled.len();
    let observations = ObservationTally {
        input: pre.label_tally.input,
        kept: pre.dataset.n_obs,
        unassigned: pre.label_tally.unassigned,
        excluded_by_cycle: pre.label_tally.excluded_by_cycle,
        excluded_by_user,
        no_period_data: pre.label_tally.no_period_data,
    };

    let mut per_user_obs = BTreeMap::new();
    let mut per_day_obs = BTreeMap::new();
    for o in &pre.dataset.observations {
        *per_user_obs.entry(o.user_id.clone()).or_insert(0) += 1;
        *per_day_obs.entry(o.cycle_day.value()).or_insert(0) += 1;
    }

    let distinct = |ids: &mut dyn Iterator<Item = &str>| {
        let mut v: Vec<&str> = ids.collect();
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let users = UserTally {
        with_outcomes: distinct(&mut outcomes.iter().map(|o| o.user_id.as_str())),
        with_periods: distinct(&mut periods.iter().map(|p| p.user_id.as_str())),
        labelled: pre.dataset.n_users + pre.user_exclusions.len(),
        kept: pre.dataset.n_users,
        excluded_insufficient_phase: pre.user_exclusions.len(),
    };

    let date_coverage = outcomes.iter().map(|o| o.obs_date).min().zip(outcomes.iter().map(|o| o.obs_date).max()).map(
        |(first, last)| DateCoverage { first, last, span_days: (last - first).num_days() + 1 },
    );

    EdaSummary {
        cycle_length_histogram,
        cycle_length_summary: ValueSummary::of(pre.cycles.iter().map(|c| c.length_days as f64)),
        cycles,
        observations,
        users,
        user_exclusions: pre.user_exclusions.clone(),
        per_user_obs,
        per_day_obs,
        date_coverage,
        raw_outcome_summary: ValueSummary::of(outcomes.iter().map(|o| o.value)),
    }
}

/// Writes the normalised dataset as CSV.
pub fn write_dataset<W: Write>(dataset: &CycleDataset, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "date", "cycle_day", "raw_value", "norm_value"])?;
    for o in &dataset.observations {
        w.write_record([
            o.user_id.as_str(),
            &o.obs_date.to_string(),
            &o.cycle_day.value().to_string(),
            &o.raw_value.to_string(),
            &o.norm_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
