//! Drives the HTTP service in-process: load the example dataset, analyse it,
//! fetch the stored report and its figure.
//!
//! `cargo run --example http_service`

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use tower::ServiceExt;

use cyclekit::service::{router, ServiceConfig};

async fn call(app: &axum::Router, req: Request<Body>) -> (u16, Option<String>, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.expect("infallible router");
    let status = resp.status().as_u16();
    let report_id = resp.headers().get("x-report-id").map(|v| v.to_str().unwrap().to_string());
    (status, report_id, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("cyclekit-example-store");
    let app = router(ServiceConfig::new(&dir));

    let (status, _, body) = call(&app, Request::get("/example").body(Body::empty())?).await;
    let created: serde_json::Value = serde_json::from_slice(&body)?;
    let id = created["dataset_id"].as_str().unwrap().to_string();
    println!("GET /example -> {status}, dataset {id}");

    let req = Request::post(format!("/datasets/{id}/analyze"))
        .header("content-type", "application/json")
        .body(Body::from(r#"{"K": 0}"#))?;
    let (status, _, body) = call(&app, req).await;
    println!("analyze with K=0 -> {status}: {}", String::from_utf8_lossy(&body));

    let req = Request::post(format!("/datasets/{id}/analyze"))
        .header("content-type", "application/json")
        .body(Body::from(r#"{"bootstrap": {"n_samples": 100}, "adjust": ["mean_sleep"]}"#))?;
    let (status, report_id, body) = call(&app, req).await;
    let report: serde_json::Value = serde_json::from_slice(&body)?;
    println!("analyze -> {status}, Table 2 row {}", report["table2"]);

    let report_id = report_id.expect("X-Report-Id header");
    let (status, _, svg) = call(&app, Request::get(format!("/reports/{report_id}/figure.svg")).body(Body::empty())?).await;
    println!("figure.svg -> {status}, {} bytes", svg.len());
    println!("store: {}", dir.display());
    Ok(())
}
