//! HTTP contract: status codes, payload shapes and event ordering.

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fuzzcfg::io::fixtures;
use fuzzcfg_service::session::{parse_log, Session};
use fuzzcfg_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const SIMPLE_OPTIMUM: &str = "S1 S2 S3 S5 S7 S9 S10 S12 S15 S18 S20 S23 S25 S28";

async fn raw(app: &Router, method: &str, uri: &str, body: impl Into<Body>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.into())
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
    let body = if body.is_null() { String::new() } else { body.to_string() };
    let (status, text) = raw(app, method, uri, body).await;
    (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
}

async fn create(app: &Router, document: &str) -> String {
    let (status, body) = call(app, "POST", "/sessions", json!({ "document": document })).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_owned()
}

/// Events stored so far, in delivery order.
async fn events(app: &Router, id: &str) -> Vec<Value> {
    let (status, text) = raw(app, "GET", &format!("/sessions/{id}/events?follow=false"), "").await;
    assert_eq!(status, StatusCode::OK);
    data_lines(&text)
}

fn data_lines(text: &str) -> Vec<Value> {
    text.lines()
        .filter_map(|l| l.strip_prefix("data:"))
        .map(|d| serde_json::from_str(d.trim()).unwrap())
        .collect()
}

fn edit(value: f64) -> Value {
    json!({
        "op": "set_cell",
        "relation": { "kind": "function_solution" },
        "row": "F3",
        "col": "S4",
        "value": value,
    })
}

fn optimum_row(result: &Value, i: usize) -> String {
    result["optimal_configurations"][i]["selections"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["solution"].as_str().unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

fn kinds(events: &[Value]) -> Vec<String> {
    events.iter().map(|e| e["kind"].as_str().unwrap().to_owned()).collect()
}

#[tokio::test]
async fn conveyor_session_yields_the_simple_optimum_at_revision_zero() {
    let app = router(AppState::new());
    let (status, body) = call(&app, "POST", "/sessions", json!({ "document": fixtures::CONVEYOR })).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["id"], "s1");
    assert_eq!(body["revision"], 0);
    assert_eq!(body["warnings"], json!([]));

    let (status, before) = call(&app, "GET", "/sessions/s1/result", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before["result"], Value::Null);
    assert_eq!(before["result_revision"], Value::Null);

    let (status, ran) = call(&app, "POST", "/sessions/s1/runs", json!({ "wait": true })).await;
    assert_eq!(status, StatusCode::OK, "{ran}");
    assert_eq!(ran["revision"], 0);
    assert_eq!(optimum_row(&ran["result"], 0), SIMPLE_OPTIMUM);

    let (_, after) = call(&app, "GET", "/sessions/s1/result", Value::Null).await;
    assert_eq!((after["revision"].as_u64(), after["result_revision"].as_u64()), (Some(0), Some(0)));
    assert_eq!(after["result"], ran["result"]);
    assert_eq!(after["running"], false);
}

#[tokio::test]
async fn editing_f3_s4_moves_the_f3_slot_to_s4() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/updates"), edit(0.95)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["revision"], 1);
    let (_, ran) = call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "wait": true })).await;
    assert_eq!(ran["revision"], 1);
    let f3 = ran["result"]["optimal_configurations"][0]["selections"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["function"] == "F3")
        .unwrap()
        .clone();
    assert_eq!(f3["solution"], "S4");
}

#[tokio::test]
async fn rapid_updates_publish_one_result_for_the_final_revision() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR).await;
    call(&app, "POST", &format!("/sessions/{id}/updates"), edit(0.95)).await;
    call(&app, "POST", &format!("/sessions/{id}/updates"), edit(0.97)).await;
    let (_, ran) = call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "wait": true })).await;
    assert_eq!(ran["revision"], 2);
    let evs = events(&app, &id).await;
    let ready: Vec<&Value> = evs.iter().filter(|e| e["kind"] == "result-ready").collect();
    assert_eq!(ready.len(), 1);
    assert_eq!(ready[0]["revision"], 2);
    let seqs: Vec<u64> = evs.iter().map(|e| e["seq"].as_u64().unwrap()).collect();
    assert_eq!(seqs, (0..evs.len() as u64).collect::<Vec<_>>());
}

#[tokio::test]
async fn an_update_racing_a_run_never_publishes_a_stale_result() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR).await;
    for round in 0..5 {
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/runs"), Value::Null).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        call(&app, "POST", &format!("/sessions/{id}/updates"), edit(0.9 + f64::from(round) / 100.0)).await;
    }
    let (_, ran) = call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "wait": true })).await;
    assert_eq!(ran["revision"], 5);
    let evs = events(&app, &id).await;
    // every result is at least as new as the previous one and was computed
    // from the revision current when it was published
    let mut newest = 0;
    let mut revision = 0;
    for e in &evs {
        match e["kind"].as_str().unwrap() {
            "update-accepted" => revision = e["revision"].as_u64().unwrap(),
            "result-ready" => {
                let r = e["revision"].as_u64().unwrap();
                assert!(r >= newest);
                assert_eq!(r, revision);
                newest = r;
            }
            _ => {}
        }
    }
    assert_eq!(newest, 5);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = router(AppState::new());
    for (method, path) in [
        ("POST", "updates"),
        ("POST", "runs"),
        ("GET", "result"),
        ("GET", "events"),
        ("GET", "log"),
        ("GET", "model"),
    ] {
        let (status, body) = call(&app, method, &format!("/sessions/nope/{path}"), Value::Null).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{path}");
        assert_eq!(body["error"], "unknown_session");
    }
}

#[tokio::test]
async fn documents_are_checked_on_create() {
    let app = router(AppState::new());
    let (status, body) = call(&app, "POST", "/sessions", json!({ "document": "name = " })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "syntax_error");
    assert!(!body["issues"].as_array().unwrap().is_empty());

    let bad = fixtures::CONVEYOR.replacen(
        r#"{ row = "F3", col = "S4", value = 0.6 }"#,
        r#"{ row = "F3", col = "S4", value = 1.5 }"#,
        1,
    );
    let line = bad.lines().position(|l| l.contains("1.5")).unwrap() + 1;
    let (status, body) = call(&app, "POST", "/sessions", json!({ "document": bad })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_model");
    assert!(body["issues"].as_array().unwrap().iter().any(|i| i["location"]["line"] == line));

    let (status, body) = call(&app, "POST", "/sessions", json!({ "doc": "" })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "malformed_request");
}

#[tokio::test]
async fn bad_updates_are_rejected_without_state_change() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR).await;
    let path = format!("/sessions/{id}/updates");

    let (status, body) = raw(&app, "POST", &path, "{\"op\": \"teleport\"}").await;
    let body: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "malformed_update");

    let (status, body) = call(&app, "POST", &path, edit(1.5)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].is_string() && body["error"] != "malformed_update");
    assert!(!body["reasons"].as_array().unwrap().is_empty());

    let (_, result) = call(&app, "GET", &format!("/sessions/{id}/result"), Value::Null).await;
    assert_eq!(result["revision"], 0);
    let (_, model) = raw(&app, "GET", &format!("/sessions/{id}/model"), "").await;
    assert_eq!(model, fuzzcfg::io::serialize_model(&fixtures::conveyor()));
    let evs = events(&app, &id).await;
    assert_eq!(kinds(&evs), vec!["update-rejected", "update-rejected"]);
    assert_eq!(evs[0]["code"], "malformed_update");
}

#[tokio::test]
async fn run_options_become_logged_updates() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR_GENERALIZED).await;
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "alpha": 2.0 })).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");

    let (status, ran) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/runs"),
        json!({ "generalized": true, "score": "mean", "wait": true }),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{ran}");
    assert_eq!(ran["revision"], 2);
    assert_eq!(ran["result"]["optimal_configurations"].as_array().unwrap().len(), 4);

    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "colour": 1 })).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "malformed_request");

    let (_, log) = raw(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    let entries: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let tags: Vec<&str> = entries.iter().map(|e| e["entry"].as_str().unwrap()).collect();
    assert_eq!(tags, vec!["create", "update", "update", "update", "run"]);
    assert_eq!(entries[1]["update"], json!({ "op": "set_option", "change": { "option": "alpha", "value": 2.0 } }));
}

#[tokio::test]
async fn events_resume_from_a_sequence_number() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::DESK_LAMP).await;
    call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "wait": true })).await;
    let all = events(&app, &id).await;
    assert_eq!(all.first().unwrap()["kind"], "phase-started");
    assert_eq!(all.last().unwrap()["kind"], "result-ready");
    let (_, text) = raw(&app, "GET", &format!("/sessions/{id}/events?follow=false&since=3"), "").await;
    assert_eq!(data_lines(&text), all[3..].to_vec());
    assert!(text.contains("event: phase-started") || all.len() <= 3);
}

#[tokio::test]
async fn followers_see_live_events_in_order() {
    let app = router(AppState::new());
    let id = create(&app, fixtures::CONVEYOR).await;
    let req = Request::builder()
        .uri(format!("/sessions/{id}/events"))
        .body(Body::empty())
        .unwrap();
    let mut body = app.clone().oneshot(req).await.unwrap().into_body();
    call(&app, "POST", &format!("/sessions/{id}/runs"), Value::Null).await;
    let mut text = String::new();
    while !text.contains("event: result-ready") {
        let frame = body.frame().await.expect("stream open").unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(&data).unwrap());
        }
    }
    let live = data_lines(&text);
    assert_eq!(live, events(&app, &id).await);
}

#[tokio::test]
async fn the_served_log_replays_to_the_same_session() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::with_log_dir(dir.path()));
    let id = create(&app, fixtures::CONVEYOR).await;
    call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "wait": true })).await;
    call(&app, "POST", &format!("/sessions/{id}/updates"), edit(0.95)).await;
    raw(&app, "POST", &format!("/sessions/{id}/updates"), "garbage").await;
    call(&app, "POST", &format!("/sessions/{id}/runs"), json!({ "epsilon": 0.1, "wait": true })).await;
    let (_, served) = raw(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    let on_disk = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(on_disk, served);

    let replayed = Session::replay("r", &parse_log(&on_disk).unwrap()).unwrap();
    let (_, result) = call(&app, "GET", &format!("/sessions/{id}/result"), Value::Null).await;
    assert_eq!(serde_json::to_value(&replayed.computed().unwrap().result).unwrap(), result["result"]);
    let replayed_kinds: Vec<&str> = replayed.events().iter().map(|e| e.body.kind()).collect();
    assert_eq!(replayed_kinds, kinds(&events(&app, &id).await));
}
