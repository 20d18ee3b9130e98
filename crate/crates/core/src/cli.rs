//! Command-line interface.
//!
//! Exit codes: 0 success, 2 invalid input or request, 1 internal error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::figures::{render_forest_svg, render_svg};
use crate::gam::{self, DiagnosticsBundle, FourierFit};
use crate::ingest::{generate_example, MappingOverride};
use crate::phases::{self, TurningPoint};
use crate::preprocess::{self, EdaSummary, FilterConfig};
use crate::report::{self, AnalysisError, AnalysisReport, AnalysisRequest, MappingOverrides, Sources};
use crate::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "cyclekit", version, about = "Cyclic Fourier analysis of outcomes across the menstrual cycle")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter, label and normalise; write the dataset CSV and EDA summary.
    Preprocess(PreprocessArgs),
    /// Fit the cycle model and print the fit with AIC across K.
    Fit(FitArgs),
    /// Run the full pipeline and write the report JSON.
    Analyze(AnalyzeArgs),
    /// Render a figure from a saved report.
    Figure(FigureArgs),
    /// Write the synthetic example dataset.
    Example(ExampleArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub periods: PathBuf,
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long)]
    pub confounders: Option<PathBuf>,
    #[arg(long)]
    pub periods_user_column: Option<String>,
    #[arg(long)]
    pub periods_date_column: Option<String>,
    #[arg(long)]
    pub outcomes_user_column: Option<String>,
    #[arg(long)]
    pub outcomes_date_column: Option<String>,
    #[arg(long)]
    pub outcomes_value_column: Option<String>,
    #[arg(long)]
    pub confounders_user_column: Option<String>,
}

impl InputArgs {
    fn overrides(&self) -> MappingOverrides {
        MappingOverrides {
            periods: MappingOverride {
                user_column: self.periods_user_column.clone(),
                date_column: self.periods_date_column.clone(),
                value_column: None,
            },
            outcomes: MappingOverride {
                user_column: self.outcomes_user_column.clone(),
                date_column: self.outcomes_date_column.clone(),
                value_column: self.outcomes_value_column.clone(),
            },
            confounders: MappingOverride { user_column: self.confounders_user_column.clone(), ..MappingOverride::default() },
        }
    }
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 21)]
    pub min_cycle_len: i64,
    #[arg(long, default_value_t = 35)]
    pub max_cycle_len: i64,
    #[arg(long, default_value_t = 5)]
    pub min_obs_per_phase: usize,
}

impl FilterArgs {
    fn config(&self) -> FilterConfig {
        FilterConfig {
            min_cycle_len: self.min_cycle_len,
            max_cycle_len: self.max_cycle_len,
            min_obs_per_phase: self.min_obs_per_phase,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    /// Normalised dataset CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// EDA summary JSON; printed to stdout when omitted.
    #[arg(long)]
    pub eda: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub inputs: InputArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    /// Full request as JSON; other analysis flags are ignored when given.
    #[arg(long)]
    pub request: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub n_boot: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Comma-separated confounder columns.
    #[arg(long, value_delimiter = ',')]
    pub adjust: Vec<String>,
    #[arg(long)]
    pub stratify: Option<String>,
    #[arg(long)]
    pub outcome_name: Option<String>,
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render the cycle figure.
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

impl AnalyzeArgs {
    fn request(&self) -> Result<AnalysisRequest, CliError> {
        if let Some(path) = &self.request {
            let text = read(path)?;
            return serde_json::from_slice(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())));
        }
        Ok(AnalysisRequest {
            k: self.k,
            filters: self.filters.config(),
            bootstrap: report::BootstrapRequest { enabled: !self.no_bootstrap, n_samples: self.n_boot, ci_level: self.ci_level },
            seed: self.seed,
            adjust: self.adjust.clone(),
            stratify: self.stratify.clone(),
            outcome_name: self.outcome_name.clone(),
            include_timings: self.timings,
            ..AnalysisRequest::default()
        })
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FigureKind {
    Cycle,
    Forest,
    Strata,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "cycle")]
    pub kind: FigureKind,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// Also write the figure model JSON here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExampleArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub users: usize,
    #[arg(long, default_value_t = 90)]
    pub days: usize,
    /// Output directory for periods.csv, outcomes.csv and confounders.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Dataset and report store; defaults to $CYCLEKIT_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_bootstrap_samples: Option<usize>,
}

#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub exit_code: i32,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { message: message.into(), exit_code: 2 }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { message: message.into(), exit_code: 1 }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        Self { message: e.to_string(), exit_code: e.exit_code() }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))
}

fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write(p, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::internal(e.to_string())),
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s
}

struct Loaded {
    periods: Vec<u8>,
    outcomes: Vec<u8>,
    confounders: Option<Vec<u8>>,
}

impl Loaded {
    fn read(args: &InputArgs) -> Result<Self, CliError> {
        Ok(Self {
            periods: read(&args.periods)?,
            outcomes: read(&args.outcomes)?,
            confounders: args.confounders.as_deref().map(read).transpose()?,
        })
    }

    fn sources(&self) -> Sources<'_> {
        Sources { periods: &self.periods, outcomes: &self.outcomes, confounders: self.confounders.as_deref() }
    }
}

#[derive(Serialize)]
struct FitOutput {
    n_users: usize,
    fit: FourierFit,
    turning_points: Vec<TurningPoint>,
    diagnostics: DiagnosticsBundle,
    best_k: Option<usize>,
}

fn prepare(inputs: &InputArgs, filters: &FilterConfig) -> Result<(report::AnalysisInputs, preprocess::Preprocessed), CliError> {
    let loaded = Loaded::read(inputs)?;
    let parsed = report::load_inputs(&loaded.sources(), &inputs.overrides())?;
    let pre = preprocess::run(&parsed.periods, &parsed.outcomes, filters)
        .map_err(|e| CliError::input(e.to_string()))?;
    Ok((parsed, pre))
}

fn preprocess_cmd(args: &PreprocessArgs) -> Result<(), CliError> {
    let filters = args.filters.config();
    AnalysisRequest { filters, ..AnalysisRequest::default() }.validate()?;
    let (parsed, pre) = prepare(&args.inputs, &filters)?;
    let eda: EdaSummary = preprocess::compute_eda(&parsed.periods, &parsed.outcomes, &pre);
    let mut buf = Vec::new();
    preprocess::write_dataset(&pre.dataset, &mut buf).map_err(|e| CliError::internal(e.to_string()))?;
    write(&args.out, &buf)?;
    emit(args.eda.as_deref(), &pretty(&eda))
}

fn fit_cmd(args: &FitArgs) -> Result<(), CliError> {
    let filters = args.filters.config();
    let request = AnalysisRequest { k: args.k, filters, ..AnalysisRequest::default() };
    request.validate()?;
    let (_, pre) = prepare(&args.inputs, &filters)?;
    if pre.dataset.n_users == 0 {
        return Err(CliError::input("no users passed quality filter"));
    }
    let fit = gam::fit(&pre.dataset, &request.spec()).map_err(|e| CliError::input(format!("cycle model: {e}")))?;
    let diagnostics = gam::diagnostics(&fit, &pre.dataset);
    let out = FitOutput {
        n_users: pre.dataset.n_users,
        turning_points: phases::find_turning_points(&fit).unwrap_or_default(),
        best_k: diagnostics.best_k(),
        fit,
        diagnostics,
    };
    emit(args.out.as_deref(), &pretty(&out))
}

fn cycle_svg(report: &AnalysisReport, width: Option<u32>, height: Option<u32>) -> Result<String, CliError> {
    let figures = report.figures.as_ref().ok_or_else(|| CliError::input("report has no figures"))?;
    let m = &figures.cycle;
    render_svg(m, width.unwrap_or(m.style.width), height.unwrap_or(m.style.height)).map_err(|e| CliError::input(e.to_string()))
}

fn analyze_cmd(args: &AnalyzeArgs) -> Result<(), CliError> {
    let request = args.request()?;
    let loaded = Loaded::read(&args.inputs)?;
    let report = report::analyze_sources(&loaded.sources(), &args.inputs.overrides(), &request)?;
    emit(args.out.as_deref(), &report::to_json(&report))?;
    if let Some(svg) = &args.svg {
        write(svg, cycle_svg(&report, None, None)?.as_bytes())?;
    }
    Ok(())
}

fn figure_cmd(args: &FigureArgs) -> Result<(), CliError> {
    let text = read(&args.report)?;
    let report: AnalysisReport =
        serde_json::from_slice(&text).map_err(|e| CliError::input(format!("{}: {e}", args.report.display())))?;
    let figures = report.figures.as_ref().ok_or_else(|| CliError::input("report has no figures"))?;
    let (svg, model_json) = match args.kind {
        FigureKind::Cycle => (cycle_svg(&report, args.width, args.height)?, pretty(&figures.cycle)),
        FigureKind::Strata => {
            let m = figures.strata.as_ref().ok_or_else(|| CliError::input("report has no strata"))?;
            let svg = render_svg(m, args.width.unwrap_or(m.style.width), args.height.unwrap_or(m.style.height));
            (svg.map_err(|e| CliError::input(e.to_string()))?, pretty(m))
        }
        FigureKind::Forest => {
            let m = figures.forest.as_ref().ok_or_else(|| CliError::input("report has no confounder estimates"))?;
            let svg = render_forest_svg(m, args.width.unwrap_or(m.style.width), args.height.unwrap_or(m.style.height));
            (svg.map_err(|e| CliError::input(e.to_string()))?, pretty(m))
        }
    };
    write(&args.out, svg.as_bytes())?;
    if let Some(json) = &args.json {
        write(json, model_json.as_bytes())?;
    }
    Ok(())
}

fn example_cmd(args: &ExampleArgs) -> Result<(), CliError> {
    if args.users == 0 {
        return Err(CliError::input("--users must be ≥ 1"));
    }
    let data = generate_example(args.seed, args.users, args.days);
    write(&args.out.join("periods.csv"), &data.periods_csv())?;
    write(&args.out.join("outcomes.csv"), &data.outcomes_csv())?;
    write(&args.out.join("confounders.csv"), &data.confounders_csv())
}

fn serve_cmd(args: &ServeArgs) -> Result<(), CliError> {
    let mut config = ServiceConfig::from_env();
    if let Some(dir) = &args.data_dir {
        config.data_dir = dir.clone();
    }
    if let Some(cap) = args.max_bootstrap_samples {
        config.max_bootstrap_samples = cap;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::internal(e.to_string()))?;
    runtime.block_on(service::serve(SocketAddr::new(args.host, args.port), config)).map_err(|e| CliError::internal(e.to_string()))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Figure(a) => figure_cmd(a),
        Command::Example(a) => example_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.exit_code
        }
    }
}
