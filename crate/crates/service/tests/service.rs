use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use geocut_core::eval::{make_synthetic, Shape, SyntheticSpec};
use geocut_core::{Curve, Field, Point};
use geocut_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "geocut-test-boundary";

fn png(field: &Field) -> Vec<u8> {
    let img = image::GrayImage::from_fn(field.width() as u32, field.height() as u32, |x, y| {
        image::Luma([(field.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

fn disk_png(size: usize) -> Vec<u8> {
    let shape = Shape::standard(size).remove(0);
    png(&make_synthetic(&SyntheticSpec::new(shape, size, 0.025), 11).unwrap().image)
}

fn blank_png() -> Vec<u8> {
    png(&Field::filled(48, 40, 0.5).unwrap())
}

fn multipart(image: Option<&[u8]>, config: Option<&str>) -> Vec<u8> {
    let mut body = Vec::new();
    if let Some(bytes) = image {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"img.png\"\r\nContent-Type: image/png\r\n\r\n").bytes());
        body.extend_from_slice(bytes);
        body.extend(b"\r\n");
    }
    if let Some(text) = config {
        body.extend(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"config\"\r\n\r\n{text}\r\n").bytes());
    }
    body.extend(format!("--{BOUNDARY}--\r\n").bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn create(app: &Router, image: Option<&[u8]>, config: Option<&str>, query: &str) -> (StatusCode, Value) {
    let req = Request::post(format!("/sessions{query}"))
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(image, config)))
        .unwrap();
    let (s, b) = send(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn click_raw(app: &Router, id: &str, body: String, query: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::post(format!("/sessions/{id}/segment{query}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .unwrap();
    send(app, req).await
}

async fn click(app: &Router, id: &str, x: f64, y: f64) -> (StatusCode, Value) {
    let (s, b) = click_raw(app, id, format!("{{\"x\": {x}, \"y\": {y}}}"), "").await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn app_with(cfg: ServiceConfig) -> (Arc<AppState>, Router) {
    let state = AppState::new(cfg);
    (state.clone(), router(state))
}

fn points(v: &Value) -> Vec<Point> {
    serde_json::from_value(v.clone()).unwrap()
}

#[tokio::test]
async fn disk_session_segments_the_click() {
    let (_, app) = app_with(ServiceConfig::default());
    let (s, body) = create(&app, Some(&disk_png(96)), None, "").await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["status"], "ready");
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(96), Some(96)));
    let id = body["session_id"].as_str().unwrap().to_string();

    let (s, status) = get(&app, &format!("/sessions/{id}/status")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(status["status"], "ready");
    assert_eq!(status["cache"], "miss");

    let (s, props) = get(&app, &format!("/sessions/{id}/proposals")).await;
    assert_eq!(s, StatusCode::OK);
    let props = props.as_array().unwrap().clone();
    assert!(!props.is_empty());
    assert_eq!(props[0]["id"], 0);

    let (s, c) = click(&app, &id, 47.5, 47.5).await;
    assert_eq!(s, StatusCode::OK, "{c}");
    let poly = Curve::closed(points(&c["polygon"])).unwrap();
    assert!(poly.contains_point(Point::new(47.5, 47.5)).unwrap());
    assert_eq!(points(&c["cut"])[0], Point::new(47.5, 47.5));
    assert!(c["energy"].as_f64().unwrap() >= 0.0);
    assert!(!c["node_ids"].as_array().unwrap().is_empty());
    assert!(c["timing_ms"]["total"].as_f64().unwrap() >= 0.0);

    let body = r#"{"x": 47.5, "y": 47.5}"#.to_string();
    let a = click_raw(&app, &id, body.clone(), "?timing=false").await;
    let b = click_raw(&app, &id, body, "?timing=false").await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
    assert!(!String::from_utf8_lossy(&a.1).contains("timing_ms"));

    // A point in the middle of a proposal trace, away from the closing point of a loop.
    let trace = points(&props[0]["points"]);
    let on = trace[trace.len() / 2];
    let (s, e) = click(&app, &id, on.x, on.y).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e["error"], "invalid_landmark");
    assert_eq!(click(&app, &id, 400.0, 10.0).await.0, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, e) = click(&app, &id, 3.0, 3.0).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"], "no_contour");

    assert_eq!(click_raw(&app, &id, "{\"x\": 1}".into(), "").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(click_raw(&app, &id, "nonsense".into(), "").await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn blank_session_has_no_proposals() {
    let (_, app) = app_with(ServiceConfig::default());
    let (s, body) = create(&app, Some(&blank_png()), None, "").await;
    assert_eq!(s, StatusCode::CREATED);
    let id = body["session_id"].as_str().unwrap();
    let (s, props) = get(&app, &format!("/sessions/{id}/proposals")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(props, Value::Array(vec![]));
    assert_eq!(click(&app, id, 20.0, 20.0).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn rejected_uploads() {
    let (state, app) = app_with(ServiceConfig { max_bytes: 4096, ..Default::default() });
    let (s, e) = create(&app, Some(b"\x89PNG\r\n\x1a\nthis is not really a png"), None, "").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["error"], "bad_image");
    assert_eq!(create(&app, None, None, "").await.0, StatusCode::BAD_REQUEST);

    let big = vec![7u8; 5000];
    let (s, e) = create(&app, Some(&big), None, "").await;
    assert_eq!(s, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(e["error"], "too_large");
    let huge = vec![7u8; 200_000];
    assert_eq!(create(&app, Some(&huge), None, "").await.0, StatusCode::PAYLOAD_TOO_LARGE);

    let (s, e) = create(&app, Some(&blank_png()), Some("[graph]\nzeta = -1.0\n"), "").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(e["error"], "bad_config");
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn unknown_and_expired_sessions() {
    let (state, app) = app_with(ServiceConfig { idle: Duration::from_millis(300), ..Default::default() });
    assert_eq!(get(&app, "/sessions/nope/status").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/sessions/nope/proposals").await.0, StatusCode::NOT_FOUND);
    assert_eq!(click(&app, "nope", 5.0, 5.0).await.0, StatusCode::NOT_FOUND);

    let (_, a) = create(&app, Some(&blank_png()), None, "").await;
    let (_, b) = create(&app, Some(&blank_png()), Some("[selection]\nmu1 = 2.0\n"), "").await;
    let (a, b) = (a["session_id"].as_str().unwrap(), b["session_id"].as_str().unwrap());
    tokio::time::sleep(Duration::from_millis(150)).await;
    assert_eq!(get(&app, &format!("/sessions/{a}/status")).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(250)).await;
    // `a` was touched 250 ms ago, `b` 400 ms ago.
    assert_eq!(get(&app, &format!("/sessions/{b}/proposals")).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, &format!("/sessions/{a}/proposals")).await.0, StatusCode::OK);
    tokio::time::sleep(Duration::from_millis(400)).await;
    assert_eq!(state.session_count(), 1);
    state.sweep();
    assert_eq!(state.session_count(), 0);
    assert_eq!(get(&app, &format!("/sessions/{a}/status")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn duplicate_uploads_reuse_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { cache_dir: Some(dir.path().to_path_buf()), ..Default::default() };
    let image = disk_png(128);
    let (_, app) = app_with(cfg.clone());

    let t = Instant::now();
    let (s, first) = create(&app, Some(&image), None, "").await;
    let cold = t.elapsed();
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(first["cache"], "miss");

    let t = Instant::now();
    let (s, second) = create(&app, Some(&image), None, "").await;
    let warm = t.elapsed();
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(second["cache"], "memory");
    assert_ne!(first["session_id"], second["session_id"]);
    assert_eq!(first["proposals"], second["proposals"]);
    assert!(warm < cold, "reuse took {warm:?}, first build {cold:?}");

    // Another configuration of the same image is a different graph.
    let (_, other) = create(&app, Some(&image), Some("{\"graph\": {\"zeta\": 6.0}}"), "").await;
    assert_eq!(other["cache"], "miss");

    // A fresh process finds the graph on disk.
    let (_, restarted) = app_with(cfg);
    let (s, third) = create(&restarted, Some(&image), None, "").await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(third["cache"], "disk");
    assert!(third["build_ms"].as_f64().unwrap() < first["build_ms"].as_f64().unwrap());

    let id1 = first["session_id"].as_str().unwrap();
    let id3 = third["session_id"].as_str().unwrap();
    let body = r#"{"x": 63.5, "y": 63.5}"#.to_string();
    let a = click_raw(&app, id1, body.clone(), "?timing=false").await;
    let b = click_raw(&restarted, id3, body, "?timing=false").await;
    assert_eq!(a.0, StatusCode::OK);
    assert_eq!(a, b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_clicks_match_sequential_ones() {
    let (_, app) = app_with(ServiceConfig::default());
    let (_, body) = create(&app, Some(&disk_png(96)), None, "").await;
    let id = body["session_id"].as_str().unwrap().to_string();
    let clicks: Vec<(f64, f64)> = vec![(47.5, 47.5), (40.0, 52.0), (3.0, 3.0), (55.0, 41.0), (47.5, 60.0), (30.0, 47.0), (90.0, 90.0), (62.0, 47.5)];
    let mut sequential = Vec::new();
    for &(x, y) in &clicks {
        sequential.push(click_raw(&app, &id, format!("{{\"x\": {x}, \"y\": {y}}}"), "?timing=false").await);
    }
    let tasks: Vec<_> = clicks
        .iter()
        .map(|&(x, y)| {
            let (app, id) = (app.clone(), id.clone());
            tokio::spawn(async move { click_raw(&app, &id, format!("{{\"x\": {x}, \"y\": {y}}}"), "?timing=false").await })
        })
        .collect();
    for (task, expected) in tasks.into_iter().zip(&sequential) {
        assert_eq!(&task.await.unwrap(), expected);
    }
    assert!(sequential.iter().any(|r| r.0 == StatusCode::OK));
}

#[tokio::test]
async fn background_build_reports_status() {
    let (_, app) = app_with(ServiceConfig::default());
    let (s, body) = create(&app, Some(&disk_png(96)), None, "?wait=false").await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let id = body["session_id"].as_str().unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let (s, status) = get(&app, &format!("/sessions/{id}/status")).await;
        assert_eq!(s, StatusCode::OK);
        match status["status"].as_str().unwrap() {
            "ready" => break,
            "building" => {
                let (s, e) = get(&app, &format!("/sessions/{id}/proposals")).await;
                assert!(s == StatusCode::SERVICE_UNAVAILABLE || s == StatusCode::OK, "{e}");
            }
            other => panic!("unexpected status {other}"),
        }
        assert!(Instant::now() < deadline);
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(click(&app, id, 47.5, 47.5).await.0, StatusCode::OK);
}

#[tokio::test]
async fn cors_headers_for_the_ui() {
    let (_, app) = app_with(ServiceConfig { cors_origins: vec!["http://localhost:5173".into()], ..Default::default() });
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/sessions")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "http://localhost:5173");

    let req = Request::get("/sessions/x/status").header(header::ORIGIN, "http://evil.example").body(Body::empty()).unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert!(res.headers().get(header::ACCESS_CONTROL_ALLOW_ORIGIN).is_none());
}
