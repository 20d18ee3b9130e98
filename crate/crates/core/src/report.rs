//! End-to-end analysis: request validation, the pipeline, and the report.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::{self, BootstrapConfig, ConfidenceBand};
use crate::confound::{self, AdjustedCurve, ConfounderEstimate, Table4Row};
use crate::figures::{self, FigureOptions, ReportFigures};
use crate::gam::{self, day_grid, DiagnosticsBundle, FourierFit, FourierSpec};
use crate::ingest::{
    self, resolve_mapping, sniff, ColumnMapping, ConfounderTable, IngestError, MappingOverride, PeriodRecord,
    RawObservation, TableKind,
};
use crate::phases::{self, DailyMean, PhaseSegment, TurningPoint};
use crate::preprocess::{self, EdaSummary, FilterConfig, PreprocessError};
use crate::stratify::{self, StrataDefinition, StrataKind, StratumResult};

pub const REPORT_SCHEMA: u32 = 1;
pub const MAX_HARMONICS: usize = 6;
pub const MAX_CYCLE_LEN_LIMIT: i64 = 60;
const SNIFF_ROWS: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("{table} table: {source}")]
    Ingest { table: &'static str, source: IngestError },
    #[error("{0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Precondition(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl AnalysisError {
    pub fn code(&self) -> &'static str {
        match self {
            AnalysisError::Ingest { .. } => "invalid_input",
            AnalysisError::InvalidRequest(_) => "invalid_request",
            AnalysisError::Precondition(_) => "precondition_failed",
            AnalysisError::Internal(_) => "internal",
        }
    }

    /// CLI exit status: 2 for anything caused by the inputs, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            AnalysisError::Internal(_) => 1,
            _ => 2,
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            AnalysisError::Ingest { .. } => 400,
            AnalysisError::InvalidRequest(_) | AnalysisError::Precondition(_) => 422,
            AnalysisError::Internal(_) => 500,
        }
    }

    pub fn row(&self) -> Option<usize> {
        match self {
            AnalysisError::Ingest { source, .. } => source.row(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapRequest {
    pub enabled: bool,
    pub n_samples: usize,
    pub ci_level: f64,
}

impl Default for BootstrapRequest {
    fn default() -> Self {
        Self { enabled: true, n_samples: 200, ci_level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisRequest {
    #[serde(rename = "K")]
    pub k: usize,
    pub period: f64,
    pub filters: FilterConfig,
    pub bootstrap: BootstrapRequest,
    pub seed: u64,
    /// Confounders for the adjusted model.
    pub adjust: Vec<String>,
    /// Effect modifier for stratified fits.
    pub stratify: Option<String>,
    pub stratify_kind: Option<StrataKind>,
    /// Display name of the outcome; defaults to the value column name.
    pub outcome_name: Option<String>,
    pub figure: FigureOptions,
    /// Record stage timings in the provenance block. Off by default so reports
    /// are byte-stable.
    pub include_timings: bool,
}

impl Default for AnalysisRequest {
    fn default() -> Self {
        Self {
            k: 2,
            period: 28.0,
            filters: FilterConfig::default(),
            bootstrap: BootstrapRequest::default(),
            seed: 42,
            adjust: Vec::new(),
            stratify: None,
            stratify_kind: None,
            outcome_name: None,
            figure: FigureOptions::default(),
            include_timings: false,
        }
    }
}

impl AnalysisRequest {
    pub fn spec(&self) -> FourierSpec {
        FourierSpec { n_harmonics: self.k, period: self.period }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidRequest(m.to_string()));
        if self.k < 1 {
            return bad("K must be ≥ 1");
        }
        if self.k > MAX_HARMONICS {
            return bad("K must be ≤ 6");
        }
        if self.period != 28.0 {
            return bad("period is fixed at 28 days");
        }
        let f = &self.filters;
        if f.min_cycle_len < 1 {
            return bad("min_cycle_len must be ≥ 1");
        }
        if f.max_cycle_len > MAX_CYCLE_LEN_LIMIT {
            return bad("max_cycle_len must be ≤ 60");
        }
        if f.min_cycle_len > f.max_cycle_len {
            return bad("min_cycle_len must not exceed max_cycle_len");
        }
        if f.min_obs_per_phase < 1 {
            return bad("min_obs_per_phase must be ≥ 1");
        }
        if self.bootstrap.n_samples < 2 {
            return bad("bootstrap n_samples must be ≥ 2");
        }
        if !(self.bootstrap.ci_level > 0.0 && self.bootstrap.ci_level < 1.0) {
            return bad("bootstrap ci_level must be in (0, 1)");
        }
        let mut names = self.adjust.clone();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("confounder names must be distinct");
        }
        if self.figure.width == 0 || self.figure.height == 0 {
            return bad("figure dimensions must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSummary {
    pub periods_sha256: String,
    pub outcomes_sha256: String,
    pub confounders_sha256: Option<String>,
    pub periods_mapping: ColumnMapping,
    pub outcomes_mapping: ColumnMapping,
    pub confounders_mapping: Option<ColumnMapping>,
    pub duplicate_period_rows: usize,
    pub duplicate_outcome_rows: usize,
}

/// Parsed tables ready for analysis.
#[derive(Debug, Clone)]
pub struct AnalysisInputs {
    pub periods: Vec<PeriodRecord>,
    pub outcomes: Vec<RawObservation>,
    pub confounders: Option<ConfounderTable>,
    pub value_column: String,
    pub summary: Option<InputSummary>,
}

impl AnalysisInputs {
    pub fn new(periods: Vec<PeriodRecord>, outcomes: Vec<RawObservation>, confounders: Option<ConfounderTable>) -> Self {
        Self { periods, outcomes, confounders, value_column: "value".into(), summary: None }
    }
}

/// Raw CSV bytes of the tables.
#[derive(Debug, Clone, Copy)]
pub struct Sources<'a> {
    pub periods: &'a [u8],
    pub outcomes: &'a [u8],
    pub confounders: Option<&'a [u8]>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingOverrides {
    pub periods: MappingOverride,
    pub outcomes: MappingOverride,
    pub confounders: MappingOverride,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn mapping_for(
    bytes: &[u8],
    kind: TableKind,
    table: &'static str,
    overrides: &MappingOverride,
) -> Result<ColumnMapping, AnalysisError> {
    let wrap = |source| AnalysisError::Ingest { table, source };
    let (header, rows) = sniff(bytes, SNIFF_ROWS).map_err(wrap)?;
    resolve_mapping(&header, &rows, kind, overrides).map_err(wrap)
}

/// Detects columns (honouring overrides) and parses every table.
pub fn load_inputs(sources: &Sources<'_>, overrides: &MappingOverrides) -> Result<AnalysisInputs, AnalysisError> {
    let pm = mapping_for(sources.periods, TableKind::Periods, "periods", &overrides.periods)?;
    let periods = ingest::parse_periods(sources.periods, &pm).map_err(|source| AnalysisError::Ingest { table: "periods", source })?;
    let om = mapping_for(sources.outcomes, TableKind::Outcomes, "outcomes", &overrides.outcomes)?;
    let outcomes =
        ingest::parse_outcomes(sources.outcomes, &om).map_err(|source| AnalysisError::Ingest { table: "outcomes", source })?;
    let (confounders, cm) = match sources.confounders {
        Some(bytes) => {
            let cm = mapping_for(bytes, TableKind::Confounders, "confounders", &overrides.confounders)?;
            let table =
                ingest::parse_confounders(bytes, &cm).map_err(|source| AnalysisError::Ingest { table: "confounders", source })?;
            (Some(table), Some(cm))
        }
        None => (None, None),
    };
    let summary = InputSummary {
        periods_sha256: sha256_hex(sources.periods),
        outcomes_sha256: sha256_hex(sources.outcomes),
        confounders_sha256: sources.confounders.map(sha256_hex),
        periods_mapping: pm,
        outcomes_mapping: om.clone(),
        confounders_mapping: cm,
        duplicate_period_rows: periods.duplicate_rows,
        duplicate_outcome_rows: outcomes.duplicate_rows,
    };
    Ok(AnalysisInputs {
        periods: periods.records,
        outcomes: outcomes.records,
        confounders,
        value_column: om.value_column.unwrap_or_else(|| "value".into()),
        summary: Some(summary),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub report_schema: u32,
    pub seed: u64,
    pub request: AnalysisRequest,
    pub inputs: Option<InputSummary>,
    /// Milliseconds per stage; present only when requested.
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

/// One row of the cycle-effect results table, formatted for display.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table2Row {
    pub outcome: String,
    pub n_users: usize,
    pub n_obs: usize,
    /// `n_obs` with thousands separators.
    pub n_obs_display: String,
    pub p_value: String,
    pub stars: String,
    /// `Day -7, 4`, or `---` when the cycle effect is not significant.
    pub turning_points: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataReport {
    pub definition: StrataDefinition,
    pub results: Vec<StratumResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub report_schema: u32,
    pub outcome: String,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
    pub eda: EdaSummary,
    pub fit: FourierFit,
    /// Evaluation days shared by the curve, band, adjusted and stratum curves.
    pub grid: Vec<f64>,
    pub curve: Vec<f64>,
    pub band: Option<ConfidenceBand>,
    pub turning_points: Vec<TurningPoint>,
    pub phase_segments: Vec<PhaseSegment>,
    pub daily_means: Vec<DailyMean>,
    pub diagnostics: DiagnosticsBundle,
    pub confounder_estimates: Vec<ConfounderEstimate>,
    pub adjusted: Option<AdjustedCurve>,
    pub strata: Option<StrataReport>,
    pub table2: Table2Row,
    pub table4: Vec<Table4Row>,
    pub figures: Option<ReportFigures>,
}

impl AnalysisReport {
    pub fn turning_point_days(&self) -> Vec<i32> {
        self.turning_points.iter().map(|t| t.day).collect()
    }
}

pub fn format_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn format_p_table(p: f64) -> String {
    if p < 0.001 {
        "<0.001".into()
    } else {
        format!("{p:.3}")
    }
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub fn format_turning_days(days: &[i32]) -> String {
    if days.is_empty() {
        return "---".into();
    }
    let list: Vec<String> = days.iter().map(i32::to_string).collect();
    format!("Day {}", list.join(", "))
}

pub fn table2_row(outcome: &str, n_users: usize, fit: &FourierFit, turning_days: &[i32]) -> Table2Row {
    let significant = fit.p_value < 0.05;
    Table2Row {
        outcome: outcome.to_string(),
        n_users,
        n_obs: fit.n_obs,
        n_obs_display: format_thousands(fit.n_obs),
        p_value: format_p_table(fit.p_value),
        stars: significance_stars(fit.p_value).to_string(),
        turning_points: if significant { format_turning_days(turning_days) } else { "---".into() },
    }
}

fn preprocess_error(e: PreprocessError) -> AnalysisError {
    match e {
        PreprocessError::InvalidBounds { .. } => AnalysisError::InvalidRequest(e.to_string()),
        PreprocessError::ZeroUserMean(_) => AnalysisError::Precondition(e.to_string()),
    }
}

/// Preprocessing and EDA only.
pub fn explore(inputs: &AnalysisInputs, filters: &FilterConfig) -> Result<EdaSummary, AnalysisError> {
    let pre = preprocess::run(&inputs.periods, &inputs.outcomes, filters).map_err(preprocess_error)?;
    Ok(preprocess::compute_eda(&inputs.periods, &inputs.outcomes, &pre))
}

struct Timer {
    enabled: bool,
    last: Instant,
    stages: BTreeMap<String, f64>,
}

impl Timer {
    fn lap(&mut self, stage: &str) {
        if self.enabled {
            let now = Instant::now();
            self.stages.insert(stage.to_string(), (now - self.last).as_secs_f64() * 1e3);
            self.last = now;
        }
    }
}

pub fn analyze(inputs: &AnalysisInputs, request: &AnalysisRequest) -> Result<AnalysisReport, AnalysisError> {
    request.validate()?;
    let mut timer = Timer { enabled: request.include_timings, last: Instant::now(), stages: BTreeMap::new() };
    let spec = request.spec();
    let mut warnings = Vec::new();

    let pre = preprocess::run(&inputs.periods, &inputs.outcomes, &request.filters).map_err(preprocess_error)?;
    let eda = preprocess::compute_eda(&inputs.periods, &inputs.outcomes, &pre);
    let dataset = &pre.dataset;
    if dataset.n_users == 0 {
        return Err(AnalysisError::Precondition("no users passed quality filter".into()));
    }
    timer.lap("preprocess");

    let fit = gam::fit(dataset, &spec).map_err(|e| AnalysisError::Precondition(format!("cycle model: {e}")))?;
    let grid = day_grid();
    let curve = gam::predict(&fit, &grid);
    let diagnostics = gam::diagnostics(&fit, dataset);
    timer.lap("fit");

    let band = if request.bootstrap.enabled {
        let cfg = BootstrapConfig {
            n_samples: request.bootstrap.n_samples,
            seed: request.seed,
            ci_level: request.bootstrap.ci_level,
            grid: grid.clone(),
        };
        match bootstrap::bootstrap_band(&pre.labelled, &spec, &cfg) {
            Ok(band) => {
                warnings.extend(band.warning.clone());
                Some(band)
            }
            Err(e) => {
                warnings.push(format!("bootstrap band unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };
    timer.lap("bootstrap");

    let turning_points = match phases::find_turning_points(&fit) {
        Ok(tps) => tps,
        Err(e) => {
            warnings.push(format!("turning points unavailable: {e}"));
            Vec::new()
        }
    };
    let phase_segments = if turning_points.len() >= 2 {
        phases::fit_phase_models(dataset, &turning_points).unwrap_or_else(|e| {
            warnings.push(format!("phase models unavailable: {e}"));
            Vec::new()
        })
    } else {
        Vec::new()
    };
    let daily_means = phases::daily_means(dataset);
    timer.lap("phases");

    let outcome = request.outcome_name.clone().unwrap_or_else(|| inputs.value_column.clone());
    let needs_table = !request.adjust.is_empty() || request.stratify.is_some();
    let table = match (&inputs.confounders, needs_table) {
        (Some(t), _) => Some(t),
        (None, true) => {
            return Err(AnalysisError::InvalidRequest("confounder adjustment or stratification requires a confounder table".into()))
        }
        (None, false) => None,
    };

    let mut confounder_estimates = Vec::new();
    let mut adjusted = None;
    if let (Some(table), false) = (table, request.adjust.is_empty()) {
        for name in &request.adjust {
            let e = confound::estimate_confounder(dataset, table, name, &spec)
                .map_err(|e| AnalysisError::Precondition(e.to_string()))?;
            confounder_estimates.push(e);
        }
        adjusted = Some(
            confound::fit_adjusted(dataset, table, &request.adjust, &spec)
                .map_err(|e| AnalysisError::Precondition(e.to_string()))?,
        );
    }
    timer.lap("confounders");

    let strata = match (table, &request.stratify) {
        (Some(table), Some(name)) => {
            let kind = request.stratify_kind.unwrap_or_else(|| StrataKind::infer(table, name));
            let definition = stratify::define_strata_matched(dataset, table, name, kind)
                .map_err(|e| AnalysisError::Precondition(e.to_string()))?;
            let results = stratify::fit_strata(dataset, &definition, &spec);
            Some(StrataReport { definition, results })
        }
        _ => None,
    };
    timer.lap("strata");

    let turning_days: Vec<i32> = turning_points.iter().map(|t| t.day).collect();
    let table2 = table2_row(&outcome, dataset.n_users, &fit, &turning_days);
    let table4 = confounder_estimates.iter().map(|e| confound::table4_row(&outcome, e)).collect();

    let mut report = AnalysisReport {
        report_schema: REPORT_SCHEMA,
        outcome,
        provenance: Provenance {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            report_schema: REPORT_SCHEMA,
            seed: request.seed,
            request: request.clone(),
            inputs: inputs.summary.clone(),
            timings_ms: None,
        },
        warnings,
        eda,
        fit,
        grid,
        curve,
        band,
        turning_points,
        phase_segments,
        daily_means,
        diagnostics,
        confounder_estimates,
        adjusted,
        strata,
        table2,
        table4,
        figures: None,
    };
    report.figures = Some(figures::build_report_figures(&report, &request.figure));
    timer.lap("figures");
    if timer.enabled {
        report.provenance.timings_ms = Some(timer.stages);
    }
    Ok(report)
}

pub fn analyze_sources(
    sources: &Sources<'_>,
    overrides: &MappingOverrides,
    request: &AnalysisRequest,
) -> Result<AnalysisReport, AnalysisError> {
    request.validate()?;
    analyze(&load_inputs(sources, overrides)?, request)
}

/// Pretty JSON with a trailing newline.
pub fn to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}
