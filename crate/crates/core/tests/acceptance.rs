//! Acceptance suite: one PASS/FAIL line per primary criterion.
//!
//! Runs as a plain binary (`harness = false`); exits non-zero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use chrono::{Days, NaiveDate};
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use cyclekit::bootstrap::{bootstrap_band, BootstrapConfig};
use cyclekit::confound::estimate_confounder;
use cyclekit::gam::{self, build_design, FourierSpec};
use cyclekit::ingest::{generate_example, generate_example_with, ConfounderTable, CovariateValue, ExampleConfig, PeriodRecord, RawObservation};
use cyclekit::phases::{turning_points_of, TurningKind};
use cyclekit::preprocess::{self, filter_cycles, build_cycles, wrap_day, CycleDataset, CycleDay, FilterConfig, LabelledObservation, Observation};
use cyclekit::report::{self, AnalysisRequest, MappingOverrides, Sources};
use cyclekit::stratify::{define_strata_matched, fit_strata, StrataKind};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()
}

/// Users on exact 28-day cycles observed for whole cycles, so every day is
/// equally represented. Raw values are `level·(100 + wave(d) + ε)/100`, which
/// makes `100 + wave(d)` the true curve after normalisation.
fn simulate_users(
    rng: &mut ChaCha8Rng,
    prefix: &str,
    n_users: usize,
    n_cycles: usize,
    noise_sd: f64,
    wave: &dyn Fn(f64) -> f64,
) -> Vec<LabelledObservation> {
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let mut out = Vec::with_capacity(n_users * n_cycles * 28);
    for u in 0..n_users {
        let user_id = format!("{prefix}{u:04}");
        let level = 60.0 + 80.0 * rng.random::<f64>();
        let phase: i32 = rng.random_range(0..28);
        for t in 0..(28 * n_cycles) as i32 {
            let day = (phase + t).rem_euclid(28) - 14;
            let raw = level * (100.0 + wave(day as f64) + noise.sample(rng)) / 100.0;
            out.push(LabelledObservation {
                user_id: user_id.clone(),
                obs_date: base_date() + Days::new(t as u64),
                cycle_day: CycleDay::new(day).unwrap(),
                raw_value: raw,
            });
        }
    }
    out
}

fn example_wave(d: f64) -> f64 {
    3.0 * (2.0 * PI * d / 28.0).sin() + (4.0 * PI * d / 28.0).cos()
}

fn ks_uniform(p: &mut [f64]) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic one-sample Kolmogorov–Smirnov critical value at α = 0.01.
fn ks_critical_1pct(n: usize) -> f64 {
    1.62762 / (n as f64).sqrt()
}

// ---------------------------------------------------------------------------

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Solves the normal equations `XᵀX β = Xᵀy` in exact rational arithmetic.
fn rational_normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let xr: Vec<Vec<BigRational>> = x.iter().map(|r| r.iter().map(|v| exact(*v)).collect()).collect();
    let yr: Vec<BigRational> = y.iter().map(|v| exact(*v)).collect();
    let mut a: Vec<Vec<BigRational>> = vec![vec![BigRational::zero(); p + 1]; p];
    for (row, yi) in xr.iter().zip(&yr) {
        for i in 0..p {
            for j in 0..p {
                a[i][j] += &row[i] * &row[j];
            }
            a[i][p] += &row[i] * yi;
        }
    }
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        assert!(!a[col][col].is_zero(), "singular normal equations");
        for r in 0..p {
            if r != col && !a[r][col].is_zero() {
                let factor = &a[r][col] / &a[col][col];
                for c in col..=p {
                    let delta = &factor * &a[col][c];
                    a[r][c] -= delta;
                }
            }
        }
    }
    (0..p).map(|i| (&a[i][p] / &a[i][i]).to_f64().unwrap()).collect()
}

fn oracle_row(d: f64, k_max: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for k in 1..=k_max {
        let t = 2.0 * PI * k as f64 * d / 28.0;
        row.push(t.sin());
        row.push(t.cos());
    }
    row
}

fn oracle_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut fit_time = Duration::ZERO;
    for _ in 0..50 {
        let k = rng.random_range(1..=3);
        let spec = FourierSpec::with_harmonics(k);
        let n = rng.random_range(2 * k + 12..=300);
        let days: Vec<f64> = (0..n).map(|_| rng.random_range(-14..=13) as f64).collect();
        let y: Vec<f64> = days
            .iter()
            .map(|d| 100.0 + 4.0 * (2.0 * PI * d / 28.0).sin() + 10.0 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let t = Instant::now();
        let fit = gam::fit_values(&days, &y, &spec).map_err(|e| e.to_string())?;
        fit_time += t.elapsed();
        let x: Vec<Vec<f64>> = days.iter().map(|d| oracle_row(*d, k)).collect();
        let truth = rational_normal_equations(&x, &y);
        let scale = truth.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = fit.coefficients.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
        worst = worst.max(err);
    }
    ensure(worst <= 1e-8, || format!("max relative error {worst:.3e} > 1e-8"))?;
    ensure(fit_time < Duration::from_secs(1), || format!("fits took {fit_time:?}"))?;
    Ok(format!("50 datasets, max relative error {worst:.2e}, fits {:.1} ms", fit_time.as_secs_f64() * 1e3))
}

fn orthogonality() -> Check {
    let days: Vec<CycleDay> = CycleDay::all().collect();
    let mut worst_off: f64 = 0.0;
    let mut worst_diag: f64 = 0.0;
    for k in 1..=6 {
        let spec = FourierSpec::with_harmonics(k);
        let g = build_design(&days, &spec).matrix.gram();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                if i == j {
                    // Σ 1 = 28; Σ sin² = Σ cos² = 14 on a full period
                    let expect = if i == 0 { 28.0 } else { 14.0 };
                    worst_diag = worst_diag.max((g.get(i, j) - expect).abs());
                } else {
                    worst_off = worst_off.max(g.get(i, j).abs());
                }
            }
        }
    }
    ensure(worst_off < 1e-9, || format!("max off-diagonal {worst_off:.3e}"))?;
    ensure(worst_diag < 1e-9, || format!("diagonal deviates by {worst_diag:.3e}"))?;
    Ok(format!("K = 1..6, max |off-diagonal| {worst_off:.2e}, diagonal error {worst_diag:.2e}"))
}

fn cyclic_continuity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let spec = FourierSpec::with_harmonics(1 + i % 6);
        let coefs: Vec<f64> = (0..spec.n_params()).map(|_| 10.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        worst = worst.max((spec.evaluate(&coefs, -14.0) - spec.evaluate(&coefs, 14.0)).abs());
    }
    ensure(worst < 1e-9, || format!("max |ŷ(−14) − ŷ(14)| = {worst:.3e}"))?;
    Ok(format!("100 coefficient vectors, max gap {worst:.2e}"))
}

fn null_calibration() -> Check {
    let t = Instant::now();
    let cfg = ExampleConfig { n_users: 50, days_per_user: 30, a1: 0.0, a2: 0.0, ..ExampleConfig::default() };
    let mut p: Vec<f64> = (0..500u64)
        .into_par_iter()
        .map(|seed| {
            let data = generate_example_with(&cfg, 10_000 + seed);
            let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default()).expect("preprocess");
            gam::fit(&pre.dataset, &FourierSpec::default()).expect("fit").p_value
        })
        .collect();
    let elapsed = t.elapsed();
    let rate = p.iter().filter(|v| **v < 0.05).count() as f64 / p.len() as f64;
    let ks = ks_uniform(&mut p);
    let crit = ks_critical_1pct(p.len());
    let detail = format!("500 sims, rejection rate {rate:.3}, KS {ks:.4} (crit {crit:.4}), {:.1} s", elapsed.as_secs_f64());
    ensure((0.03..=0.07).contains(&rate), || format!("rejection rate out of [0.03, 0.07]: {detail}"))?;
    ensure(ks < crit, || format!("KS above critical value: {detail}"))?;
    ensure(elapsed < Duration::from_secs(120), || format!("too slow: {detail}"))?;
    Ok(detail)
}

/// Extrema of `f` on a circular dense grid of spacing `step`, rounded to days.
fn dense_grid_extrema(f: &dyn Fn(f64) -> f64, step: f64) -> Vec<(i32, TurningKind)> {
    let n = (28.0 / step).round() as usize;
    let v: Vec<f64> = (0..n).map(|i| f(-14.0 + i as f64 * step)).collect();
    let mut out = Vec::new();
    for i in 0..n {
        let prev = v[(i + n - 1) % n];
        let next = v[(i + 1) % n];
        let day = wrap_day((-14.0 + i as f64 * step).round() as i32);
        if v[i] > prev && v[i] >= next {
            out.push((day, TurningKind::Peak));
        } else if v[i] < prev && v[i] <= next {
            out.push((day, TurningKind::Trough));
        }
    }
    out.sort_by_key(|(d, _)| *d);
    out
}

fn signal_recovery() -> Check {
    let t = Instant::now();
    let data = generate_example(0, 100, 90);
    let sources = Sources {
        periods: &data.periods_csv(),
        outcomes: &data.outcomes_csv(),
        confounders: None,
    };
    let report = report::analyze_sources(&sources, &MappingOverrides::default(), &AnalysisRequest::default())
        .map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let truth = dense_grid_extrema(&|d| ExampleConfig::default().waveform(d), 1e-4);
    let found: Vec<(i32, TurningKind)> = report.turning_points.iter().map(|tp| (tp.day, tp.kind)).collect();
    let amp = report.fit.amplitude(1);
    let day_gap = |a: i32, b: i32| {
        let d = (a - b).rem_euclid(28);
        d.min(28 - d)
    };
    let detail = format!(
        "p = {:.2e}, turning points {:?} vs truth {:?}, first-harmonic amplitude {amp:.3}, {:.1} s",
        report.fit.p_value,
        report.turning_point_days(),
        truth.iter().map(|t| t.0).collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
    ensure(report.fit.p_value < 0.001, || format!("not significant: {detail}"))?;
    ensure(found.len() == truth.len(), || format!("turning point count differs: {detail}"))?;
    for ((fd, fk), (td, tk)) in found.iter().zip(&truth) {
        ensure(fk == tk && day_gap(*fd, *td) <= 1, || format!("turning point mismatch: {detail}"))?;
    }
    ensure((amp - 3.0).abs() <= 0.15 * 3.0, || format!("amplitude outside ±15%: {detail}"))?;
    ensure(elapsed < Duration::from_secs(30), || format!("too slow: {detail}"))?;
    Ok(detail)
}

fn bootstrap_coverage() -> Check {
    let t = Instant::now();
    let spec = FourierSpec::default();
    let check_days = [0i32, 7, -7];
    let covered: Vec<[bool; 3]> = (0..200u64)
        .into_par_iter()
        .map(|sim| {
            let mut rng = ChaCha8Rng::seed_from_u64(30_000 + sim);
            let obs = simulate_users(&mut rng, "u", 40, 2, 5.0, &example_wave);
            let cfg = BootstrapConfig { seed: sim, ..BootstrapConfig::default() };
            let band = bootstrap_band(&obs, &spec, &cfg).expect("band");
            check_days.map(|d| {
                let i = (d + 14) as usize;
                let truth = 100.0 + example_wave(d as f64);
                band.lower[i] <= truth && truth <= band.upper[i]
            })
        })
        .collect();
    let elapsed = t.elapsed();
    let rates: Vec<f64> =
        (0..3).map(|j| covered.iter().filter(|c| c[j]).count() as f64 / covered.len() as f64).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let obs = simulate_users(&mut rng, "u", 40, 2, 5.0, &example_wave);
    let cfg = BootstrapConfig { seed: 99, ..BootstrapConfig::default() };
    let a = bootstrap_band(&obs, &spec, &cfg).map_err(|e| e.to_string())?;
    let b = bootstrap_band(&obs, &spec, &cfg).map_err(|e| e.to_string())?;

    let detail = format!(
        "200 sims, coverage day 0 {:.3}, day +7 {:.3}, day −7 {:.3}, {:.1} s",
        rates[0],
        rates[1],
        rates[2],
        elapsed.as_secs_f64()
    );
    for r in &rates {
        ensure((0.90..=0.98).contains(r), || format!("coverage outside [0.90, 0.98]: {detail}"))?;
    }
    ensure(a == b, || "band differs between runs with the same seed".into())?;
    ensure(elapsed < Duration::from_secs(600), || format!("too slow: {detail}"))?;
    Ok(format!("{detail}, deterministic"))
}

fn user_means(ds: &CycleDataset) -> BTreeMap<&str, (f64, usize)> {
    let mut m: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for o in &ds.observations {
        let e = m.entry(o.user_id.as_str()).or_default();
        e.0 += o.norm_value;
        e.1 += 1;
    }
    m
}

fn normalisation_invariant() -> Check {
    let mut worst: f64 = 0.0;
    let mut users = 0;
    for seed in 0..5u64 {
        let mut data = generate_example(seed, 60, 90);
        // one user observed only before onset, one only after
        for (id, offsets) in [("zz_pre_only", -12..0), ("zz_post_only", 0..12)] {
            let onset = base_date() + Days::new(40);
            data.periods.push(PeriodRecord { user_id: id.into(), onset_date: onset });
            for k in offsets {
                data.outcomes.push(RawObservation {
                    user_id: id.into(),
                    obs_date: onset.checked_add_signed(chrono::Duration::days(k)).unwrap(),
                    value: 50.0 + k as f64,
                });
            }
        }
        let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default()).map_err(|e| e.to_string())?;
        for id in ["zz_pre_only", "zz_post_only"] {
            ensure(!pre.dataset.user_means.contains_key(id), || format!("{id} was normalised instead of filtered"))?;
            ensure(pre.user_exclusions.iter().any(|e| e.user_id == id), || format!("{id} missing from exclusions"))?;
        }
        for (_, (sum, n)) in user_means(&pre.dataset) {
            worst = worst.max(((sum / n as f64) - 100.0).abs() / 100.0);
            users += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let obs: Vec<LabelledObservation> = simulate_users(&mut rng, "r", 10, 1, 40.0, &|d| 20.0 * (d / 3.0).sin())
            .into_iter()
            .map(|mut o| {
                o.raw_value = o.raw_value.abs() * 1e3 + 1e-3;
                o
            })
            .collect();
        let ds = preprocess::normalize(&obs).map_err(|e| e.to_string())?;
        for (_, (sum, n)) in user_means(&ds) {
            worst = worst.max(((sum / n as f64) - 100.0).abs() / 100.0);
            users += 1;
        }
    }
    ensure(worst <= 1e-9, || format!("per-user mean deviates by {worst:.3e} relative"))?;
    Ok(format!("{users} users, max relative deviation {worst:.2e}; single-phase users filtered"))
}

fn filter_semantics() -> Check {
    let start = base_date();
    let mut onsets = vec![start];
    for len in [20u64, 21, 35, 36] {
        let next = *onsets.last().unwrap() + Days::new(len);
        onsets.push(next);
    }
    let periods: Vec<PeriodRecord> = onsets.iter().map(|d| PeriodRecord { user_id: "a".into(), onset_date: *d }).collect();
    let cycles = build_cycles(&periods);
    let (kept, excluded) = filter_cycles(&cycles, 21, 35).map_err(|e| e.to_string())?;
    let kept_lens: Vec<i64> = kept.iter().map(|c| c.length_days).collect();
    let excl_lens: Vec<i64> = excluded.iter().map(|c| c.cycle.length_days).collect();
    ensure(kept_lens == vec![21, 35], || format!("kept lengths {kept_lens:?}"))?;
    ensure(excl_lens == vec![20, 36], || format!("excluded lengths {excl_lens:?}"))?;

    // (pre-onset obs, post-onset obs, expected kept)
    let cases = [(4usize, 10usize, false), (10, 4, false), (4, 4, false), (5, 5, true), (5, 10, true)];
    let mut periods = Vec::new();
    let mut outcomes = Vec::new();
    for (i, (pre, post, _)) in cases.iter().enumerate() {
        let id = format!("user{i}");
        let onset = base_date() + Days::new(30);
        periods.push(PeriodRecord { user_id: id.clone(), onset_date: onset });
        for k in -(*pre as i64)..(*post as i64) {
            outcomes.push(RawObservation {
                user_id: id.clone(),
                obs_date: onset.checked_add_signed(chrono::Duration::days(k)).unwrap(),
                value: 10.0,
            });
        }
    }
    let pre = preprocess::run(&periods, &outcomes, &FilterConfig::default()).map_err(|e| e.to_string())?;
    for (i, (a, b, keep)) in cases.iter().enumerate() {
        let id = format!("user{i}");
        ensure(pre.dataset.user_means.contains_key(&id) == *keep, || {
            format!("user with {a} pre / {b} post observations: expected kept = {keep}")
        })?;
    }
    Ok("cycles 20/36 excluded, 21/35 kept; 4 obs in either phase excluded, 5 kept".into())
}

/// A dataset with `norm_value` set to the raw value, for effects that
/// within-person normalisation would remove.
fn unnormalised(obs: &[LabelledObservation]) -> CycleDataset {
    let mut user_means = BTreeMap::new();
    for o in obs {
        user_means.insert(o.user_id.clone(), 0.0);
    }
    CycleDataset {
        observations: obs
            .iter()
            .map(|o| Observation {
                user_id: o.user_id.clone(),
                obs_date: o.obs_date,
                cycle_day: o.cycle_day,
                raw_value: o.raw_value,
                norm_value: o.raw_value,
            })
            .collect(),
        n_users: user_means.len(),
        n_obs: obs.len(),
        user_means,
    }
}

/// Additive model `100 + wave(d) + γ·z_u + ε` with `z_u ~ N(0, 1)`, one
/// whole cycle per user.
fn confounder_sim(seed: u64, gamma: f64) -> (Vec<LabelledObservation>, ConfounderTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 5.0).unwrap();
    let mut table = ConfounderTable::new(vec!["z".into()]);
    let mut obs = Vec::new();
    for u in 0..60 {
        let id = format!("c{u:03}");
        let z: f64 = rng.sample(StandardNormal);
        table.insert(id.clone(), vec![CovariateValue::Number(z)]);
        let phase: i32 = rng.random_range(0..28);
        for t in 0..28 {
            let day = (phase + t).rem_euclid(28) - 14;
            obs.push(LabelledObservation {
                user_id: id.clone(),
                obs_date: base_date() + Days::new(t as u64),
                cycle_day: CycleDay::new(day).unwrap(),
                raw_value: 100.0 + example_wave(day as f64) + gamma * z + noise.sample(&mut rng),
            });
        }
    }
    (obs, table)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn confounder_recovery() -> Check {
    let spec = FourierSpec::default();
    let covers = (0..100u64)
        .into_par_iter()
        .filter(|s| {
            let (obs, table) = confounder_sim(40_000 + s, 0.5);
            let e = estimate_confounder(&unnormalised(&obs), &table, "z", &spec).expect("estimate");
            e.ci_low <= 0.5 && 0.5 <= e.ci_high
        })
        .count();

    let mut iid_p: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let (obs, table) = confounder_sim(50_000 + s, 0.0);
            estimate_confounder(&unnormalised(&obs), &table, "z", &spec).expect("estimate").p_value
        })
        .collect();
    let iid_ks = ks_uniform(&mut iid_p);

    // the same design without an effect, normalised within person
    let normalised: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let (obs, table) = confounder_sim(50_000 + s, 0.0);
            let ds = preprocess::normalize(&obs).expect("normalize");
            let e = estimate_confounder(&ds, &table, "z", &spec).expect("estimate");
            (e.gamma.abs(), e.p_value)
        })
        .collect();
    let mut abs_gamma: Vec<f64> = normalised.iter().map(|v| v.0).collect();
    let med_gamma = median(&mut abs_gamma);
    let reject = normalised.iter().filter(|v| v.1 < 0.05).count() as f64 / normalised.len() as f64;

    // reported only: uneven cycle-day coverage leaves a small residual γ̂
    let mut example_gamma: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|s| {
            let data = generate_example(60_000 + s, 100, 90);
            let pre = preprocess::run(&data.periods, &data.outcomes, &FilterConfig::default()).expect("preprocess");
            estimate_confounder(&pre.dataset, &data.confounders, "mean_sleep", &spec).expect("estimate").gamma.abs()
        })
        .collect();
    let example_med = median(&mut example_gamma);

    let crit = ks_critical_1pct(100);
    let detail = format!(
        "γ=0.5 covered {covers}/100; null KS {iid_ks:.3} (crit {crit:.3}); normalised null median |γ̂| {med_gamma:.2e}, \
         rejection rate {reject:.2}; example mean_sleep median |γ̂| {example_med:.4}"
    );
    ensure(covers >= 90, || format!("coverage too low: {detail}"))?;
    ensure(iid_ks < crit, || format!("null p-values not uniform: {detail}"))?;
    ensure(med_gamma < 0.01, || format!("normalised |γ̂| too large: {detail}"))?;
    ensure(reject <= 0.07, || format!("normalised null rejects too often: {detail}"))?;
    Ok(detail)
}

fn turning_point_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let spec = FourierSpec::default();
    let mut total = 0;
    for i in 0..100 {
        let coefs: Vec<f64> = (0..5).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = |d: f64| {
            let t = 2.0 * PI * d / 28.0;
            coefs[1] * t.sin() + coefs[2] * t.cos() + coefs[3] * (2.0 * t).sin() + coefs[4] * (2.0 * t).cos()
        };
        let truth = dense_grid_extrema(&f, 1e-4);
        let found: Vec<(i32, TurningKind)> = turning_points_of(&coefs, &spec)
            .map_err(|e| format!("vector {i}: {e}"))?
            .into_iter()
            .map(|tp| (tp.day, tp.kind))
            .collect();
        ensure(found == truth, || format!("vector {i} {coefs:?}: found {found:?}, oracle {truth:?}"))?;
        total += found.len();
    }
    Ok(format!("100 K=2 vectors, {total} turning points, all equal to the 1e-4 grid oracle"))
}

fn stratified_dissociation() -> Check {
    let spec = FourierSpec::default();
    let outcomes: Vec<(f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(70_000 + seed);
            let mut table = ConfounderTable::new(vec!["modifier".into()]);
            let mut obs = Vec::new();
            // modifier 1..=80: nearest-rank quartiles give Low = 1..19, High = 60..80
            for (prefix, lo, hi, amp) in [("a", 1, 19, 0.0), ("b", 20, 59, 2.5), ("c", 60, 80, 5.0)] {
                let wave = move |d: f64| amp * (2.0 * PI * d / 28.0).sin();
                let n = (hi - lo + 1) as usize;
                let users = simulate_users(&mut rng, prefix, n, 2, 5.0, &wave);
                for (j, v) in (lo..=hi).enumerate() {
                    table.insert(format!("{prefix}{j:04}"), vec![CovariateValue::Number(v as f64)]);
                }
                obs.extend(users);
            }
            let ds = preprocess::normalize(&obs).expect("normalize");
            let strata = define_strata_matched(&ds, &table, "modifier", StrataKind::Continuous).expect("strata");
            let results = fit_strata(&ds, &strata, &spec);
            let p = |label: &str| results.iter().find(|r| r.label == label).and_then(|r| r.fit.as_ref()).unwrap().p_value;
            (p("Low"), p("High"))
        })
        .collect();
    let high_sig = outcomes.iter().filter(|o| o.1 < 0.001).count();
    let low_null = outcomes.iter().filter(|o| o.0 > 0.05).count();
    let detail = format!("High p < 0.001 in {high_sig}/100, Low p > 0.05 in {low_null}/100");
    ensure(high_sig == 100, || format!("High stratum not always significant: {detail}"))?;
    ensure(low_null >= 90, || format!("Low stratum rejects too often: {detail}"))?;
    Ok(detail)
}

fn is_table_p(s: &str) -> bool {
    s == "<0.001" || (s.len() == 5 && s.starts_with("0.") && s[2..].bytes().all(|b| b.is_ascii_digit()))
}

fn report_format() -> Check {
    let data = generate_example(11, 100, 90);
    let (p, o, c) = (data.periods_csv(), data.outcomes_csv(), data.confounders_csv());
    let sources = Sources { periods: &p, outcomes: &o, confounders: Some(&c) };
    let request = AnalysisRequest {
        adjust: vec!["mean_steps".into(), "mean_sleep".into()],
        seed: 5,
        ..AnalysisRequest::default()
    };
    let run = || report::analyze_sources(&sources, &MappingOverrides::default(), &request).map(|r| (report::to_json(&r), r));
    let (a, report) = run().map_err(|e| e.to_string())?;
    let (b, _) = run().map_err(|e| e.to_string())?;
    ensure(a == b, || "report JSON differs between runs with the same seed".into())?;

    let t2 = &report.table2;
    ensure(t2.n_users == report.eda.users.kept, || format!("Table 2 N users {} vs {}", t2.n_users, report.eda.users.kept))?;
    ensure(t2.n_obs == report.fit.n_obs, || "Table 2 N obs mismatch".into())?;
    ensure(t2.n_obs_display == format_with_commas(t2.n_obs), || format!("N obs display {}", t2.n_obs_display))?;
    ensure(report.fit.p_value < 0.001 && t2.p_value == "<0.001", || format!("Table 2 p-value {}", t2.p_value))?;
    let expected_days = format!(
        "Day {}",
        report.turning_point_days().iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
    );
    ensure(t2.turning_points == expected_days, || format!("turning points cell '{}'", t2.turning_points))?;

    ensure(report.table4.len() == 2, || format!("{} Table 4 rows", report.table4.len()))?;
    for row in &report.table4 {
        ensure(row.outcome == report.outcome, || "Table 4 outcome".into())?;
        let coef_ok = row.coefficient.split('.').nth(1).is_some_and(|f| f.len() == 4);
        ensure(coef_ok, || format!("coefficient '{}'", row.coefficient))?;
        let ci_ok = row.ci_95.starts_with('[') && row.ci_95.ends_with(']') && row.ci_95.contains(", ");
        ensure(ci_ok, || format!("CI '{}'", row.ci_95))?;
        let p_ok = row.p_value == "<0.01" || (row.p_value.len() == 4 && row.p_value.starts_with(['0', '1']));
        ensure(p_ok, || format!("Table 4 p '{}'", row.p_value))?;
    }
    let names: Vec<&str> = report.table4.iter().map(|r| r.confounder.as_str()).collect();
    ensure(names == ["Mean steps", "Mean sleep"], || format!("confounder labels {names:?}"))?;

    let json: serde_json::Value = serde_json::from_str(&a).map_err(|e| e.to_string())?;
    for key in ["outcome", "n_users", "n_obs", "p_value", "turning_points"] {
        ensure(json["table2"].get(key).is_some(), || format!("table2.{key} missing"))?;
    }
    for key in ["confounder", "coefficient", "ci_95", "p_value"] {
        ensure(json["table4"][0].get(key).is_some(), || format!("table4[0].{key} missing"))?;
    }
    ensure(is_table_p(&t2.p_value), || "p format".into())?;
    Ok(format!(
        "byte-stable ({} bytes); Table 2: {} users, {} obs, p {}, '{}'; Table 4: {} rows",
        a.len(),
        t2.n_users,
        t2.n_obs_display,
        t2.p_value,
        t2.turning_points,
        report.table4.len()
    ))
}

fn format_with_commas(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn main() {
    let criteria: [(&str, fn() -> Check); 12] = [
        ("oracle_equivalence", oracle_equivalence),
        ("orthogonality", orthogonality),
        ("cyclic_continuity", cyclic_continuity),
        ("null_calibration", null_calibration),
        ("signal_recovery", signal_recovery),
        ("bootstrap_coverage", bootstrap_coverage),
        ("normalisation_invariant", normalisation_invariant),
        ("filter_semantics", filter_semantics),
        ("confounder_recovery", confounder_recovery),
        ("turning_point_oracle", turning_point_oracle),
        ("stratified_dissociation", stratified_dissociation),
        ("report_format", report_format),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {name} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.2} s): {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
