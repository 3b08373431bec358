mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chatbi_core::engine::{Engine, EngineConfig};
use chatbi_server::router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

fn app() -> (Router, TempDir) {
    let tmp = common::workspace();
    let cfg = EngineConfig::load(&tmp.path().join("config.toml")).unwrap();
    (router(Arc::new(Engine::from_config(cfg).unwrap())), tmp)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(Body::from(body.unwrap_or_default().to_string())).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn new_session(app: &Router) -> String {
    let (s, v) = call(app, Method::POST, "/v1/sessions", None).await;
    assert_eq!(s, StatusCode::OK);
    v["session_id"].as_str().unwrap().to_string()
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[tokio::test]
async fn health_is_ok() {
    let (app, _t) = app();
    let (s, v) = call(&app, Method::GET, "/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok"}));
}

#[tokio::test]
async fn income_case_over_http() {
    let (app, _t) = app();
    let sid = new_session(&app).await;
    let uri = format!("/v1/sessions/{sid}/messages");

    let body = json!({"text": common::CASE_Q}).to_string();
    let (s, v) = call(&app, Method::POST, &uri, Some(&body)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["kind"], "clarify");
    let options = v["options"].as_array().unwrap();
    let labels: Vec<&str> = options.iter().map(|o| o["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["shouldincome", "shouldincome_after"]);
    assert!(v.get("sql").is_none());

    let choice = options[1]["option_id"].as_str().unwrap();
    let (s, v) = call(&app, Method::POST, &uri, Some(&json!({"text": choice}).to_string())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["kind"], "answer");
    assert_eq!(squash(v["sql"].as_str().unwrap()), squash(common::CASE_SQL));
    assert_eq!(v["columns"], json!(["total_income"]));
    assert_eq!(v["rows"].as_array().unwrap().len(), 1);

    let (s, v) = call(&app, Method::GET, &format!("/v1/sessions/{sid}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["session_id"], sid.as_str());
    assert_eq!(v["turns"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn domain_failures_are_replies_not_faults() {
    let (app, _t) = app();
    let sid = new_session(&app).await;
    let uri = format!("/v1/sessions/{sid}/messages");
    let (s, v) = call(&app, Method::POST, &uri, Some(r#"{"text": "tell me a joke"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["kind"], "reject");
    assert_eq!(v["code"], "non_bi");
    let (s, v) = call(&app, Method::POST, &uri, Some(r#"{"text": "Show me the numbers"}"#)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["kind"], "ask_missing");
}

#[tokio::test]
async fn input_errors_map_to_status_codes() {
    let (app, _t) = app();
    let sid = new_session(&app).await;
    let uri = format!("/v1/sessions/{sid}/messages");

    let (s, v) = call(&app, Method::POST, &uri, Some(r#"{"text": "   "}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "validation");

    let (s, v) = call(&app, Method::POST, &uri, Some("{not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "json");
    assert!(v["message"].is_string());

    let (s, _) = call(&app, Method::POST, &uri, Some(r#"{"txt": "hi"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let missing = "0123456789abcdef0123456789abcdef";
    let (s, v) = call(&app, Method::POST, &format!("/v1/sessions/{missing}/messages"), Some(r#"{"text": "hi"}"#)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    let (s, _) = call(&app, Method::GET, &format!("/v1/sessions/{missing}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = call(&app, Method::GET, "/v1/sessions/..%2F..%2Fetc", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn knowledge_import_then_search() {
    let (app, _t) = app();
    let line = json!({"id": "t-gm", "label": "term", "name": "gross margin",
                      "description": "revenue minus cost of goods sold, divided by revenue"});
    let (s, v) = call(&app, Method::POST, "/v1/knowledge/import", Some(&format!("{line}\n"))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v, json!({"ingested": 1}));

    let (s, v) = call(&app, Method::GET, "/v1/knowledge/search?q=gross%20margin&k=10&n=3", None).await;
    assert_eq!(s, StatusCode::OK);
    let hits = v["hits"].as_array().unwrap();
    assert!(hits.iter().any(|h| h["entry"]["name"] == "gross margin"));

    let (s, v) = call(&app, Method::POST, "/v1/knowledge/import", Some("{\"id\": 1}\n")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "ingest");

    let (s, _) = call(&app, Method::GET, "/v1/knowledge/search", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, "/v1/knowledge/search?q=x&k=-1", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn eval_endpoint_runs_file_and_inline_datasets() {
    let (app, _t) = app();
    let body = json!({"dataset": "eval/srd_toy.json", "metrics": ["ex", "uex"]}).to_string();
    let (s, v) = call(&app, Method::POST, "/v1/eval/run", Some(&body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["n_items"], 10);
    assert_eq!(v["ex"], 1.0);
    assert!(v["uex"].as_f64().unwrap() >= v["ex"].as_f64().unwrap());

    let sql = "SELECT COUNT(*) FROM hr_staff";
    let inline = json!({
        "dataset": [{"item_id": "x", "db_id": "bizdata", "mode": "srd",
                     "rounds": [{"question": "How many staff are there?", "gold_sql": sql}]}],
        "metrics": ["ex", "ves"],
        "timings": {sql: 0.01}
    });
    let (s, v) = call(&app, Method::POST, "/v1/eval/run", Some(&inline.to_string())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["n_items"], 1);

    let bad = json!({"dataset": [{"item_id": "y", "db_id": "bizdata", "mode": "srd", "rounds": []}]});
    let (s, _) = call(&app, Method::POST, "/v1/eval/run", Some(&bad.to_string())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::POST, "/v1/eval/run", Some(r#"{"dataset": "eval/none.json"}"#)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
