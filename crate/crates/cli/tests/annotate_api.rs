use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use nets_cli::server::{router, sessions_path, AppState};
use nets_core::labels::{read_labels, LabelSource, PlayClass};
use nets_core::synth::{make_corpus, SynthCounts};

struct Fixture {
    dir: tempfile::TempDir,
    truth: BTreeMap<String, PlayClass>,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
            truth: BTreeMap::new(),
        }
    }

    fn labels_path(&self) -> std::path::PathBuf {
        self.dir.path().join("manual.jsonl")
    }

    /// Weak labels are taken from the scripted truth so the pools are known.
    fn state(&mut self) -> Arc<AppState> {
        let corpus = make_corpus(&SynthCounts::new(3, 3, 2, 1), 0.0, 5).unwrap();
        self.truth = corpus.truth.iter().map(|r| (r.segment_id.clone(), r.label)).collect();
        Arc::new(AppState::new(corpus.segments, self.truth.clone(), self.labels_path(), 2, 1).unwrap())
    }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

#[tokio::test]
async fn queue_rotates_through_weak_classes() {
    let mut fx = Fixture::new();
    let app = router(fx.state(), None);
    let (status, s) = call(&app, "GET", "/api/session?annotator=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["queue_length"], 6);
    assert_eq!(s["court"]["basket"], json!([25.0, 88.75]));
    let sid = s["session_id"].as_str().unwrap().to_string();

    let mut seen = Vec::new();
    loop {
        let (_, next) = call(&app, "GET", &format!("/api/segments/next?session_id={sid}"), None).await;
        if next["done"] == true {
            break;
        }
        let seg = &next["segment"];
        let id = seg["segment_id"].as_str().unwrap().to_string();
        assert_eq!(seg["objects"].as_array().unwrap().len(), 11);
        assert_eq!(seg["objects"][0]["role"], "ball");
        assert_eq!(seg["objects"][0]["points"].as_array().unwrap().len(), 10);
        assert!((seg["dt"].as_f64().unwrap() - 0.12).abs() < 1e-12);
        seen.push(fx.truth[&id]);
        let (status, _) = call(
            &app,
            "POST",
            "/api/labels",
            Some(json!({"segment_id": id, "label": "other", "annotator": "ann", "session_id": sid})),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED);
    }
    use PlayClass::*;
    assert_eq!(seen, vec![PickAndRoll, Handoff, Other, PickAndRoll, Handoff, Other]);
}

#[tokio::test]
async fn posted_label_lands_in_file_once() {
    let mut fx = Fixture::new();
    let state = fx.state();
    let id = state.queue()[0].clone();
    let app = router(state, None);
    let body = json!({"segment_id": id, "label": "handoff", "annotator": "kim"});
    let (status, first) = call(&app, "POST", "/api/labels", Some(body.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(first["stored"], true);
    // a client retry after a lost response
    let (status, again) = call(&app, "POST", "/api/labels", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["stored"], false);

    let on_disk = read_labels(&fx.labels_path()).unwrap();
    assert_eq!(on_disk.len(), 1);
    let r = &on_disk[0];
    assert_eq!((r.segment_id.as_str(), r.label, r.source), (id.as_str(), PlayClass::Handoff, LabelSource::Manual));
    assert_eq!(r.annotator.as_deref(), Some("kim"));
    assert!(r.timestamp.is_some());

    let (_, listed) = call(&app, "GET", "/api/labels", None).await;
    assert_eq!(listed.as_array().unwrap().len(), 1);
    assert_eq!(listed[0]["source"], "manual");
}

#[tokio::test]
async fn invalid_posts_are_rejected() {
    let mut fx = Fixture::new();
    let state = fx.state();
    let id = state.queue()[0].clone();
    let app = router(state, None);
    let (status, body) = call(
        &app,
        "POST",
        "/api/labels",
        Some(json!({"segment_id": id, "label": "alley_oop", "annotator": "kim"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(body["error"].as_str().unwrap().contains("alley_oop"));
    let (status, _) = call(&app, "POST", "/api/labels", Some(json!({"segment_id": id}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(
        &app,
        "POST",
        "/api/labels",
        Some(json!({"segment_id": "nope", "label": "other", "annotator": "kim"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(!fx.labels_path().exists());
}

#[tokio::test]
async fn segment_lookup() {
    let mut fx = Fixture::new();
    let state = fx.state();
    let id = state.queue()[1].clone();
    let app = router(state, None);
    let (status, seg) = call(&app, "GET", &format!("/api/segments/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(seg["weak_label"], fx.truth[&id].as_str());
    let (status, _) = call(&app, "GET", "/api/segments/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/segments/next?session_id=ghost", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_resumes_after_restart() {
    let mut fx = Fixture::new();
    let app = router(fx.state(), None);
    let (_, s) = call(&app, "GET", "/api/session?session_id=abc&annotator=lee", None).await;
    assert_eq!(s["cursor"], 0);
    let (_, next) = call(&app, "GET", "/api/segments/next?session_id=abc", None).await;
    let id = next["segment"]["segment_id"].as_str().unwrap().to_string();
    call(
        &app,
        "POST",
        "/api/labels",
        Some(json!({"segment_id": id, "label": "pick_and_roll", "annotator": "lee", "session_id": "abc"})),
    )
    .await;
    assert!(sessions_path(&fx.labels_path()).exists());

    // a new server over the same files
    let app = router(fx.state(), None);
    let (_, s) = call(&app, "GET", "/api/session?session_id=abc", None).await;
    assert_eq!(s["cursor"], 1);
    assert_eq!(s["annotator"], "lee");
    let (_, next) = call(&app, "GET", "/api/segments/next?session_id=abc", None).await;
    assert_ne!(next["segment"]["segment_id"].as_str().unwrap(), id);
    assert_eq!(next["remaining"], 5);
}
