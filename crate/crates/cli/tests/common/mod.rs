#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, LazyLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use thali_cli::app::{self, Engine};
use thali_cli::service::{router, Service};
use thali_core::store::KnowledgeStore;
use tower::ServiceExt;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn source_files() -> Vec<PathBuf> {
    let dir = fixtures().join("sources");
    ["sample_ifct.csv", "sample_indb.csv", "sample_api.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// In-memory store with the fixture table and the ten fixture recipes.
pub fn fixture_store() -> KnowledgeStore {
    let engine = Engine::offline();
    let mut store = KnowledgeStore::new();
    app::build_into(&mut store, &source_files(), None).unwrap();
    let docs = app::read_documents(&[fixtures().join("recipes")]).unwrap();
    let out = app::ingest_documents(&engine, &mut store, &docs, |_| {});
    assert!(out.iter().all(|r| r.error.is_none()));
    store
}

pub fn service() -> Arc<Service> {
    Service::new(Engine::offline(), fixture_store())
}

pub async fn call(svc: &Arc<Service>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    raw(svc, req).await
}

pub async fn raw(svc: &Arc<Service>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&bytes)))
    };
    (status, v)
}

static API: LazyLock<Value> = LazyLock::new(|| {
    let text = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas/api.schema.json"))
        .unwrap();
    serde_json::from_str(&text).unwrap()
});

pub fn api_schema() -> &'static Value {
    &API
}

/// Panics unless `v` validates against `components.schemas.<name>`.
pub fn assert_schema(name: &str, v: &Value) {
    let schema = json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$ref": format!("#/components/schemas/{name}"),
        "components": API["components"],
    });
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(v)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(
        errors.is_empty(),
        "{name}: {errors:#?}\n{}",
        serde_json::to_string_pretty(v).unwrap()
    );
}
