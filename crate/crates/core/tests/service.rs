use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use cyclekit::ingest::generate_example;
use cyclekit::service::{router, ServiceConfig};

const BOUNDARY: &str = "cyclekit-test-boundary";

fn app(dir: &tempfile::TempDir) -> Router {
    let mut config = ServiceConfig::new(dir.path());
    config.max_bootstrap_samples = 300;
    router(config)
}

fn multipart(parts: &[(&str, &[u8])]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.csv\"\r\n\r\n")
                .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

fn upload(body: Vec<u8>) -> Request<Body> {
    Request::post("/datasets")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, bytes)
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn analyze(id: &str, body: &str) -> Request<Body> {
    Request::post(format!("/datasets/{id}/analyze"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn example_id(app: &Router) -> String {
    let (status, _, body) = send(app, Request::get("/example?seed=3&n_users=40").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    json(&body)["dataset_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn example_returns_dataset_id() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let (status, _, body) = send(&app, Request::get("/example").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["dataset_id"].as_str().unwrap().len(), 64);
    assert_eq!(v["mappings"]["periods"]["date_column"], "onset_date");
    assert_eq!(v["validation"]["outcome_users"], 100);
    assert_eq!(v["validation"]["confounder_columns"], serde_json::json!(["age", "mean_steps", "mean_sleep"]));
}

#[tokio::test]
async fn empty_upload_is_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let (status, _, body) = send(&app, Request::post("/datasets").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = json(&body);
    assert!(v["code"].is_string() && v["message"].is_string());

    let (status, _, body) = send(&app, upload(multipart(&[]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(json(&body)["message"].as_str().unwrap().contains("periods"));
}

#[tokio::test]
async fn upload_is_content_addressed_and_reports_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let data = generate_example(1, 20, 60);
    let body = multipart(&[("periods", &data.periods_csv()), ("outcomes", &data.outcomes_csv())]);
    let (status, _, first) = send(&app, upload(body.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, _, second) = send(&app, upload(body)).await;
    assert_eq!(json(&first)["dataset_id"], json(&second)["dataset_id"]);
    let v = json(&first);
    assert_eq!(v["mappings"]["outcomes"]["value_column"], "value");
    assert_eq!(v["mappings"]["outcomes"]["detection_mode"], "auto");
    assert_eq!(v["validation"]["period_users"], 20);
    assert!(v["mappings"]["confounders"].is_null());
}

#[tokio::test]
async fn malformed_date_reports_row() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let periods = b"user_id,onset_date\nu1,2024-01-01\nu1,2024-13-45\n";
    let outcomes = b"user_id,date,value\nu1,2024-01-02,3.0\n";
    let (status, _, body) = send(&app, upload(multipart(&[("periods", periods), ("outcomes", outcomes)]))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v = json(&body);
    assert_eq!(v["code"], "invalid_input");
    assert_eq!(v["row"], 3, "file line of the bad row");
}

#[tokio::test]
async fn mapping_override_field_is_applied() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let periods = b"who,start\nu1,2024-01-01\nu1,2024-01-29\n";
    let outcomes = b"who,when,score,other\nu1,2024-01-02,3.0,9\n";
    let mapping = br#"{"periods":{"user_column":"who","date_column":"start"},"outcomes":{"user_column":"who","date_column":"when","value_column":"score"}}"#;
    let (status, _, body) =
        send(&app, upload(multipart(&[("periods", periods), ("outcomes", outcomes), ("mapping", mapping)]))).await;
    assert_eq!(status, StatusCode::CREATED, "{}", String::from_utf8_lossy(&body));
    let v = json(&body);
    assert_eq!(v["mappings"]["outcomes"]["value_column"], "score");
    assert_eq!(v["mappings"]["outcomes"]["detection_mode"], "explicit");
}

#[tokio::test]
async fn oversize_upload_is_413() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ServiceConfig::new(dir.path());
    config.max_body_bytes = 1024;
    let app = router(config);
    let big = vec![b'a'; 4096];
    let (status, _, body) = send(&app, upload(multipart(&[("periods", &big), ("outcomes", &big)]))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE, "{}", String::from_utf8_lossy(&body));
}

#[tokio::test]
async fn eda_and_unknown_ids() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let id = example_id(&app).await;
    let (status, _, body) = send(&app, Request::get(format!("/datasets/{id}/eda")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["users"]["with_outcomes"], 40);
    assert!(v["cycle_length_histogram"].is_object());

    let (status, _, body) =
        send(&app, Request::get(format!("/datasets/{id}/eda?min_cycle_len=40")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["message"], "min_cycle_len must not exceed max_cycle_len");

    let missing = "0".repeat(64);
    for uri in [format!("/datasets/{missing}/eda"), format!("/reports/{missing}"), "/reports/nope/figure.svg".into()] {
        let (status, _, body) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(json(&body)["code"], "not_found");
    }
}

#[tokio::test]
async fn analyze_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let id = example_id(&app).await;

    let (status, _, body) = send(&app, analyze(&id, r#"{"K": 0}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let v = json(&body);
    assert_eq!(v["message"], "K must be ≥ 1");
    assert_eq!(v["code"], "invalid_request");

    let (status, _, body) = send(&app, analyze(&id, r#"{"bootstrap": {"n_samples": 5000}}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["message"], "bootstrap.n_samples must be ≤ 300");

    let (status, _, _) = send(&app, analyze(&id, r#"{"K": "two"}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _, _) = send(&app, analyze(&id, r#"{"unknown_field": 1}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, _, body) = send(&app, analyze(&id, r#"{"adjust": ["no_such_column"], "bootstrap": {"enabled": false}}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json(&body)["code"], "precondition_failed");
}

#[tokio::test]
async fn analysis_is_stored_and_rendered() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let id = example_id(&app).await;
    let request = r#"{"bootstrap": {"n_samples": 50}, "adjust": ["mean_sleep"], "stratify": "age"}"#;
    let (status, headers, body) = send(&app, analyze(&id, request)).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let report_id = headers["x-report-id"].to_str().unwrap().to_string();
    let report = json(&body);
    assert_eq!(report["band"]["n_samples"], 50);
    assert_eq!(report["figures"]["cycle"]["figure_schema"], 1);

    let (status, _, stored) = send(&app, Request::get(format!("/reports/{report_id}")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(stored, body);

    let (_, _, again) = send(&app, analyze(&id, request)).await;
    assert_eq!(again, body);

    for kind in ["cycle", "forest", "strata"] {
        let uri = format!("/reports/{report_id}/figure.svg?kind={kind}");
        let (status, headers, svg) = send(&app, Request::get(uri).body(Body::empty()).unwrap()).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(headers[header::CONTENT_TYPE], "image/svg+xml");
        assert!(svg.starts_with(b"<svg"));
    }
    let (status, _, _) = send(
        &app,
        Request::get(format!("/reports/{report_id}/figure.svg?width=0")).body(Body::empty()).unwrap(),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn service_report_matches_cli_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let data = generate_example(9, 30, 60);
    let files = tempfile::tempdir().unwrap();
    let (p, o, c) =
        (files.path().join("p.csv"), files.path().join("o.csv"), files.path().join("c.csv"));
    std::fs::write(&p, data.periods_csv()).unwrap();
    std::fs::write(&o, data.outcomes_csv()).unwrap();
    std::fs::write(&c, data.confounders_csv()).unwrap();

    let body = multipart(&[
        ("periods", &data.periods_csv()),
        ("outcomes", &data.outcomes_csv()),
        ("confounders", &data.confounders_csv()),
    ]);
    let (_, _, created) = send(&app, upload(body)).await;
    let id = json(&created)["dataset_id"].as_str().unwrap().to_string();
    let (status, _, service_bytes) =
        send(&app, analyze(&id, r#"{"seed": 8, "bootstrap": {"n_samples": 40}, "adjust": ["mean_steps"]}"#)).await;
    assert_eq!(status, StatusCode::OK);

    let out = files.path().join("report.json");
    let args = [
        "cyclekit", "analyze", "--periods", p.to_str().unwrap(), "--outcomes", o.to_str().unwrap(),
        "--confounders", c.to_str().unwrap(), "--seed", "8", "--n-boot", "40", "--adjust", "mean_steps",
        "--out", out.to_str().unwrap(),
    ];
    assert_eq!(cyclekit::cli::run(args), 0);
    assert_eq!(std::fs::read(out).unwrap(), service_bytes);
}

#[tokio::test]
async fn reupload_after_restart_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_example(12, 30, 60);
    let body = multipart(&[("periods", &data.periods_csv()), ("outcomes", &data.outcomes_csv())]);
    let request = r#"{"seed": 3, "bootstrap": {"n_samples": 30}}"#;

    let before = {
        let app = app(&dir);
        let (_, _, created) = send(&app, upload(body.clone())).await;
        let id = json(&created)["dataset_id"].as_str().unwrap().to_string();
        send(&app, analyze(&id, request)).await.2
    };
    // a fresh router over a store with the reports removed
    std::fs::remove_dir_all(dir.path().join("reports")).unwrap();
    let app = app(&dir);
    let (_, _, created) = send(&app, upload(body)).await;
    let id = json(&created)["dataset_id"].as_str().unwrap().to_string();
    let (status, _, after) = send(&app, analyze(&id, request)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
}

#[tokio::test]
async fn concurrent_identical_requests_agree() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&dir);
    let id = example_id(&app).await;
    let request = r#"{"seed": 5, "bootstrap": {"n_samples": 30}}"#;
    let calls = (0..4).map(|_| {
        let app = app.clone();
        let id = id.clone();
        tokio::spawn(async move { send(&app, analyze(&id, request)).await })
    });
    let mut bodies = Vec::new();
    for c in calls {
        let (status, _, body) = c.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(body);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}
