mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use echo_cohort_cli::home::Home;
use echo_cohort_cli::service::{router, AppState, Loaded, SearchResponse, SharedState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(dir: &tempfile::TempDir, max_concurrent: usize, reload: bool) -> SharedState {
    let home = Home::new(dir.path());
    let loaded = Loaded::from_home(&home).unwrap();
    AppState::new(loaded, max_concurrent, reload.then_some(home))
}

async fn call(state: &SharedState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, axum::http::HeaderMap, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(match body {
            Some(v) => Body::from(v.to_string()),
            None => Body::empty(),
        })
        .unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, headers, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn search(state: &SharedState, body: Value) -> (StatusCode, Value) {
    let (s, _, v) = call(state, "POST", "/search", Some(body)).await;
    (s, v)
}

fn results(v: &Value) -> SearchResponse {
    serde_json::from_value(v.clone()).unwrap()
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn endpoints_behave() {
    let dir = common::small_home();
    let st = state(&dir, 8, false);

    let (s, _, health) = call(&st, "GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(health["passages"], 300);

    let (_, _, models) = call(&st, "GET", "/models", None).await;
    let names: Vec<&str> = models["retrievers"].as_array().unwrap().iter().map(|m| m["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["bm25", "quantity", "dense:v0"]);

    let (_, _, cond) = call(&st, "GET", "/conditions", None).await;
    assert!(cond["conditions"].as_array().unwrap().len() > 5);
    assert!(cond["lvef_grammar"]["mention_pattern"].as_str().unwrap().len() > 10);

    // bm25: at most k, descending
    let (s, v) = search(&st, json!({"query": "severe hypokinesis", "retriever": "bm25", "k": 10})).await;
    assert_eq!(s, StatusCode::OK);
    let r = results(&v);
    assert!(!r.results.is_empty() && r.results.len() <= 10);
    assert!(r.results.windows(2).all(|w| w[0].score >= w[1].score));
    assert!(r.results.iter().all(|x| x.judged.is_none()));
    assert_eq!(r.retriever, "bm25");

    // default retriever and k
    let (_, v) = search(&st, json!({"query": "mild mitral regurgitation"})).await;
    assert_eq!(results(&v).retriever, "bm25");
    assert!(results(&v).results.len() <= 10);

    // quantity routing only returns matching mentions
    let (s, v) = search(&st, json!({"query": "LVEF > 50%", "retriever": "quantity", "k": 5})).await;
    assert_eq!(s, StatusCode::OK);
    let r = results(&v);
    assert!(!r.results.is_empty() && r.results.len() <= 5);
    for x in &r.results {
        assert!(x.lvef_mentions.iter().any(|m| m.lo > 50.0), "{:?}", x.lvef_mentions);
    }

    let (s, v) = search(&st, json!({"query": "LVEF > 50%", "retriever": "dense:v0", "k": 3, "include_judgments": true})).await;
    assert_eq!(s, StatusCode::OK);
    for x in results(&v).results {
        let judged = x.judged.expect("judged flag requested");
        assert_eq!(judged, x.lvef_mentions.iter().any(|m| m.lo > 50.0));
    }

    // not a catalog statement or LVEF query: no judgments even if asked
    let (_, v) = search(&st, json!({"query": "zebra stripes", "include_judgments": true})).await;
    assert!(results(&v).results.iter().all(|x| x.judged.is_none()));
}

#[tokio::test]
async fn errors_carry_codes() {
    let dir = common::small_home();
    let st = state(&dir, 8, false);
    let cases = [
        (json!({"query": "x", "retriever": "dense:v2"}), "unknown_retriever"),
        (json!({"query": "x", "retriever": "tfidf"}), "unknown_retriever"),
        (json!({"query": "x", "top": 3}), "malformed_request"),
        (json!({"k": 3}), "malformed_request"),
        (json!({"query": "x", "k": 0}), "invalid_k"),
        (json!({"query": "x", "k": 1001}), "invalid_k"),
        (json!({"query": "  "}), "empty_query"),
        (json!({"query": "severe hypokinesis", "retriever": "quantity"}), "not_a_quantity_query"),
    ];
    for (body, code) in cases {
        let (s, v) = search(&st, body.clone()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(error_code(&v), code, "{body}");
        assert!(!v["error"]["message"].as_str().unwrap().is_empty());
    }
    let (s, _, v) = call(&st, "POST", "/search", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&v), "malformed_request");

    let (s, _, v) = call(&st, "GET", "/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&v), "not_found");

    let (s, _, v) = call(&st, "POST", "/reload", None).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    assert_eq!(error_code(&v), "reload_disabled");
}

#[tokio::test]
async fn saturated_service_answers_503() {
    let dir = common::small_home();
    let st = state(&dir, 1, false);
    let held = st.try_reserve().unwrap();
    let (s, headers, v) = call(&st, "POST", "/search", Some(json!({"query": "x"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(error_code(&v), "overloaded");
    assert!(headers.contains_key("retry-after"));
    drop(held);
    let (s, _, _) = call(&st, "POST", "/search", Some(json!({"query": "x"}))).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn identical_requests_identical_results() {
    let dir = common::small_home();
    let st = state(&dir, 64, false);
    for retriever in ["bm25", "dense:v0", "quantity"] {
        let body = json!({"query": "LVEF between 30-45%", "retriever": retriever, "k": 20});
        let mut handles = Vec::new();
        for _ in 0..8 {
            let st = Arc::clone(&st);
            let body = body.clone();
            handles.push(tokio::spawn(async move { search(&st, body).await.1 }));
        }
        let mut lists = Vec::new();
        for h in handles {
            let v = h.await.unwrap();
            assert!(v.get("results").is_some(), "{retriever}: {v}");
            lists.push(results(&v).results);
        }
        assert!(lists.windows(2).all(|w| w[0] == w[1]), "{retriever}");
    }
}

#[tokio::test]
async fn reload_swaps_models() {
    let dir = common::small_home();
    let st = state(&dir, 8, true);
    let (_, v) = search(&st, json!({"query": "x", "retriever": "dense:v1"})).await;
    assert_eq!(error_code(&v), "unknown_retriever");
    common::cli(dir.path(), &["train", "--variant", "v1"]).unwrap();
    let (s, _, v) = call(&st, "POST", "/reload", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, _) = search(&st, json!({"query": "x", "retriever": "dense:v1"})).await;
    assert_eq!(s, StatusCode::OK);
}
