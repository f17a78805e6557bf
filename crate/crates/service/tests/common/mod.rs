#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fairprobe_service::{Clock, Service, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        log_dir: dir.to_path_buf(),
        ..ServiceConfig::default()
    }
}

pub fn open(dir: &Path, clock: Arc<dyn Clock>) -> Arc<Service> {
    Arc::new(Service::open(config(dir), clock).unwrap())
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = call_raw(app, method, uri, body.map(|b| b.to_string())).await;
    let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, value)
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

pub fn free_text(choice: &str, test_id: u64) -> Value {
    json!({
        "test_id": test_id,
        "choice": choice,
        "explanation": { "variant": "free_text", "body": "one group gets all the errors" }
    })
}
