#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use memcue_core::{Config, Corpus};
use memcue_service::{router, AppState};
use serde_json::Value;
use tower::ServiceExt;

pub fn config(store: Option<PathBuf>, log: Option<PathBuf>) -> Config {
    let mut cfg = Config::default();
    cfg.server.store_path = store;
    cfg.server.log_path = log;
    cfg
}

pub fn app(cfg: &Config) -> (Arc<AppState>, Router) {
    let state = Arc::new(AppState::from_config(cfg).expect("state"));
    (state.clone(), router(state))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

pub fn persona(name: &str) -> String {
    Corpus::bundled().personas[name].clone()
}
