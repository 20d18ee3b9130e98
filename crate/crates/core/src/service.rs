//! HTTP service over the analysis pipeline.
//!
//! Datasets and reports are stored content-addressed under the data
//! directory, so identical uploads and requests map to identical ids and the
//! report bytes match what the CLI writes for the same inputs.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::figures::{render_forest_svg, render_svg};
use crate::ingest::{generate_example, ColumnMapping};
use crate::preprocess::FilterConfig;
use crate::report::{self, sha256_hex, AnalysisError, AnalysisInputs, AnalysisReport, AnalysisRequest, MappingOverrides, Sources};

pub const DATA_DIR_ENV: &str = "CYCLEKIT_DATA_DIR";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Request body cap in bytes; larger uploads get 413.
    pub max_body_bytes: usize,
    /// Requests asking for more bootstrap resamples get 422.
    pub max_bootstrap_samples: usize,
    pub analysis_timeout: Duration,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            max_body_bytes: 50 * 1024 * 1024,
            max_bootstrap_samples: 1000,
            analysis_timeout: Duration::from_secs(300),
        }
    }

    /// Uses `$CYCLEKIT_DATA_DIR`, falling back to `./cyclekit-data`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(DATA_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("cyclekit-data")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub row: Option<usize>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), row: None } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} '{id}' not found"))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<AnalysisError> for ApiError {
    fn from(e: AnalysisError) -> Self {
        let status = StatusCode::from_u16(e.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        Self { status, body: ErrorBody { code: e.code().into(), message: e.to_string(), row: e.row() } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct AppState {
    config: ServiceConfig,
}

/// Per-table validation counts returned on upload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub period_records: usize,
    pub duplicate_period_rows: usize,
    pub period_users: usize,
    pub outcome_records: usize,
    pub duplicate_outcome_rows: usize,
    pub outcome_users: usize,
    pub confounder_users: Option<usize>,
    pub confounder_columns: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMappings {
    pub periods: ColumnMapping,
    pub outcomes: ColumnMapping,
    pub confounders: Option<ColumnMapping>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetCreated {
    pub dataset_id: String,
    pub mappings: DatasetMappings,
    pub validation: ValidationReport,
}

/// Raw tables of one stored dataset.
#[derive(Debug, Clone)]
struct StoredDataset {
    periods: Vec<u8>,
    outcomes: Vec<u8>,
    confounders: Option<Vec<u8>>,
    overrides: MappingOverrides,
}

impl StoredDataset {
    fn sources(&self) -> Sources<'_> {
        Sources { periods: &self.periods, outcomes: &self.outcomes, confounders: self.confounders.as_deref() }
    }

    fn id(&self) -> String {
        let mut buf = Vec::new();
        let overrides = serde_json::to_vec(&self.overrides).expect("overrides serialise");
        for (name, part) in [
            ("periods", Some(&self.periods[..])),
            ("outcomes", Some(&self.outcomes[..])),
            ("confounders", self.confounders.as_deref()),
            ("mapping", Some(&overrides[..])),
        ] {
            if let Some(bytes) = part {
                buf.extend_from_slice(format!("{name}:{}\n", bytes.len()).as_bytes());
                buf.extend_from_slice(bytes);
            }
        }
        sha256_hex(&buf)
    }

    fn load(&self) -> Result<AnalysisInputs, AnalysisError> {
        report::load_inputs(&self.sources(), &self.overrides)
    }
}

fn valid_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes via a uniquely named temporary file and a rename, so readers never
/// see a partial file and concurrent writers of the same content don't clash.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().expect("store paths have a parent");
    std::fs::create_dir_all(dir)?;
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path.file_name().unwrap().to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp-{}-{n}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

impl AppState {
    fn dataset_dir(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("datasets").join(id)
    }

    fn report_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join("reports").join(format!("{id}.json"))
    }

    fn save_dataset(&self, ds: &StoredDataset) -> std::io::Result<String> {
        let id = ds.id();
        let dir = self.dataset_dir(&id);
        if !dir.join("mapping.json").exists() {
            write_atomic(&dir.join("periods.csv"), &ds.periods)?;
            write_atomic(&dir.join("outcomes.csv"), &ds.outcomes)?;
            if let Some(c) = &ds.confounders {
                write_atomic(&dir.join("confounders.csv"), c)?;
            }
            write_atomic(&dir.join("mapping.json"), &serde_json::to_vec_pretty(&ds.overrides).expect("serialise"))?;
        }
        Ok(id)
    }

    fn open_dataset(&self, id: &str) -> ApiResult<StoredDataset> {
        let dir = self.dataset_dir(id);
        if !valid_id(id) || !dir.join("mapping.json").exists() {
            return Err(ApiError::not_found("dataset", id));
        }
        let read = |name: &str| std::fs::read(dir.join(name)).map_err(|e| ApiError::internal(format!("{name}: {e}")));
        let confounders = if dir.join("confounders.csv").exists() { Some(read("confounders.csv")?) } else { None };
        let overrides = serde_json::from_slice(&read("mapping.json")?).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(StoredDataset { periods: read("periods.csv")?, outcomes: read("outcomes.csv")?, confounders, overrides })
    }

    fn open_report(&self, id: &str) -> ApiResult<Vec<u8>> {
        let path = self.report_path(id);
        if !valid_id(id) || !path.exists() {
            return Err(ApiError::not_found("report", id));
        }
        std::fs::read(path).map_err(|e| ApiError::internal(e.to_string()))
    }
}

fn describe(ds: &StoredDataset, id: String) -> Result<DatasetCreated, AnalysisError> {
    let inputs = ds.load()?;
    let summary = inputs.summary.clone().expect("load_inputs fills the summary");
    let count_users = |ids: Vec<&str>| ids.into_iter().collect::<std::collections::BTreeSet<_>>().len();
    let validation = ValidationReport {
        period_records: inputs.periods.len(),
        duplicate_period_rows: summary.duplicate_period_rows,
        period_users: count_users(inputs.periods.iter().map(|p| p.user_id.as_str()).collect()),
        outcome_records: inputs.outcomes.len(),
        duplicate_outcome_rows: summary.duplicate_outcome_rows,
        outcome_users: count_users(inputs.outcomes.iter().map(|o| o.user_id.as_str()).collect()),
        confounder_users: inputs.confounders.as_ref().map(|c| c.rows.len()),
        confounder_columns: inputs.confounders.as_ref().map(|c| c.columns.clone()),
    };
    Ok(DatasetCreated {
        dataset_id: id,
        mappings: DatasetMappings {
            periods: summary.periods_mapping,
            outcomes: summary.outcomes_mapping,
            confounders: summary.confounders_mapping,
        },
        validation,
    })
}

async fn blocking<T: Send + 'static>(
    state: &AppState,
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    match tokio::time::timeout(state.config.analysis_timeout, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(result)) => result,
        Ok(Err(e)) => Err(ApiError::internal(format!("worker failed: {e}"))),
        Err(_) => Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "timeout", "analysis timed out")),
    }
}

fn field_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    let status = e.status();
    let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "payload_too_large" } else { "bad_request" };
    ApiError::new(status, code, e.body_text())
}

async fn create_dataset(
    State(state): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<DatasetCreated>)> {
    let mut multipart = multipart.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let (mut periods, mut outcomes, mut confounders, mut mapping) = (None, None, None, None);
    while let Some(field) = multipart.next_field().await.map_err(field_error)? {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(field_error)?.to_vec();
        match name.as_str() {
            "periods" => periods = Some(bytes),
            "outcomes" => outcomes = Some(bytes),
            "confounders" => confounders = Some(bytes),
            "mapping" => mapping = Some(bytes),
            other => return Err(ApiError::bad_request(format!("unexpected field '{other}'"))),
        }
    }
    let periods = periods.filter(|b| !b.is_empty()).ok_or_else(|| ApiError::bad_request("missing 'periods' file"))?;
    let outcomes = outcomes.filter(|b| !b.is_empty()).ok_or_else(|| ApiError::bad_request("missing 'outcomes' file"))?;
    let overrides: MappingOverrides = match mapping.filter(|b| !b.is_empty()) {
        Some(b) => serde_json::from_slice(&b).map_err(|e| ApiError::bad_request(format!("mapping: {e}")))?,
        None => MappingOverrides::default(),
    };
    let ds = StoredDataset { periods, outcomes, confounders: confounders.filter(|b| !b.is_empty()), overrides };
    let st = state.clone();
    let created = blocking(&state, move || {
        let created = describe(&ds, ds.id())?;
        st.save_dataset(&ds).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(created)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleQuery {
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_example_users")]
    n_users: usize,
    #[serde(default = "default_example_days")]
    days: usize,
}

fn default_example_users() -> usize {
    100
}

fn default_example_days() -> usize {
    90
}

async fn example_dataset(
    State(state): State<Arc<AppState>>,
    Query(q): Query<ExampleQuery>,
) -> ApiResult<(StatusCode, Json<DatasetCreated>)> {
    if q.n_users == 0 || q.n_users > 5000 || q.days == 0 || q.days > 730 {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", "n_users must be in 1..=5000 and days in 1..=730"));
    }
    let st = state.clone();
    let created = blocking(&state, move || {
        let data = generate_example(q.seed, q.n_users, q.days);
        let ds = StoredDataset {
            periods: data.periods_csv(),
            outcomes: data.outcomes_csv(),
            confounders: Some(data.confounders_csv()),
            overrides: MappingOverrides::default(),
        };
        let created = describe(&ds, ds.id())?;
        st.save_dataset(&ds).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(created)
    })
    .await?;
    Ok((StatusCode::OK, Json(created)))
}

async fn dataset_eda(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(filters): Query<FilterConfig>,
) -> ApiResult<Response> {
    let ds = state.open_dataset(&id)?;
    let eda = blocking(&state, move || {
        AnalysisRequest { filters, ..AnalysisRequest::default() }.validate()?;
        Ok(report::explore(&ds.load()?, &filters)?)
    })
    .await?;
    Ok(Json(eda).into_response())
}

fn report_id(dataset_id: &str, request: &AnalysisRequest) -> String {
    let body = serde_json::to_string(request).expect("request serialises");
    sha256_hex(format!("{dataset_id}\n{body}").as_bytes())
}

fn json_bytes(status: StatusCode, body: Vec<u8>, report_id: Option<&str>) -> Response {
    let mut resp = (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response();
    if let Some(id) = report_id {
        resp.headers_mut().insert("x-report-id", HeaderValue::from_str(id).expect("hex id"));
    }
    resp
}

async fn analyze_dataset(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let ds = state.open_dataset(&id)?;
    let request: AnalysisRequest = if body.iter().all(u8::is_ascii_whitespace) {
        AnalysisRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))?
    };
    request.validate()?;
    if request.bootstrap.enabled && request.bootstrap.n_samples > state.config.max_bootstrap_samples {
        return Err(ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_request",
            format!("bootstrap.n_samples must be ≤ {}", state.config.max_bootstrap_samples),
        ));
    }
    let rid = report_id(&id, &request);
    let st = state.clone();
    let rid2 = rid.clone();
    let json = blocking(&state, move || {
        let path = st.report_path(&rid2);
        if !request.include_timings && path.exists() {
            return std::fs::read_to_string(&path).map_err(|e| ApiError::internal(e.to_string()));
        }
        let report = report::analyze(&ds.load()?, &request)?;
        let json = report::to_json(&report);
        write_atomic(&path, json.as_bytes()).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(json)
    })
    .await?;
    Ok(json_bytes(StatusCode::OK, json.into_bytes(), Some(&rid)))
}

async fn get_report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let bytes = state.open_report(&id)?;
    Ok(json_bytes(StatusCode::OK, bytes, Some(&id)))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FigureQuery {
    kind: Option<String>,
    width: Option<u32>,
    height: Option<u32>,
}

async fn get_figure(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FigureQuery>,
) -> ApiResult<Response> {
    let bytes = state.open_report(&id)?;
    let report: AnalysisReport = serde_json::from_slice(&bytes).map_err(|e| ApiError::internal(e.to_string()))?;
    let figures = report.figures.ok_or_else(|| ApiError::not_found("figure for report", &id))?;
    let unavailable = |what: &str| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("report has no {what} figure"));
    let rendered = match q.kind.as_deref().unwrap_or("cycle") {
        "cycle" => {
            let m = &figures.cycle;
            render_svg(m, q.width.unwrap_or(m.style.width), q.height.unwrap_or(m.style.height))
        }
        "strata" => {
            let m = figures.strata.as_ref().ok_or_else(|| unavailable("strata"))?;
            render_svg(m, q.width.unwrap_or(m.style.width), q.height.unwrap_or(m.style.height))
        }
        "forest" => {
            let m = figures.forest.as_ref().ok_or_else(|| unavailable("forest"))?;
            render_forest_svg(m, q.width.unwrap_or(m.style.width), q.height.unwrap_or(m.style.height))
        }
        other => return Err(ApiError::bad_request(format!("unknown figure kind '{other}'"))),
    };
    let svg = rendered.map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static("image/svg+xml"))], svg).into_response())
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(config: ServiceConfig) -> Router {
    let limit = config.max_body_bytes;
    let state = Arc::new(AppState { config });
    Router::new()
        .route("/health", get(health))
        .route("/datasets", post(create_dataset))
        .route("/datasets/{id}/eda", get(dataset_eda))
        .route("/datasets/{id}/analyze", post(analyze_dataset))
        .route("/reports/{id}", get(get_report))
        .route("/reports/{id}/figure.svg", get(get_figure))
        .route("/example", get(example_dataset))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("cyclekit listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config)).await
}
