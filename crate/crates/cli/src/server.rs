//! Annotation service: a balanced queue of segments per session and an
//! append-only manual label file.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nets_core::error::{Error, Result};
use nets_core::labels::{label_map, read_labels, LabelRecord, LabelSource, PlayClass};
use nets_core::segment::{read_store, PlaySegment, Role};
use nets_model::train::sample_for_annotation;

use crate::ServeArgs;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub annotator: String,
    pub cursor: usize,
}

/// Everything the handlers share. Segments and weak labels are read-only;
/// the label file and the sessions file are the only things written.
pub struct AppState {
    segments: BTreeMap<String, PlaySegment>,
    weak: BTreeMap<String, PlayClass>,
    queue: Vec<String>,
    labels_path: PathBuf,
    sessions_path: PathBuf,
    labels: tokio::sync::Mutex<Vec<LabelRecord>>,
    sessions: Mutex<BTreeMap<String, Session>>,
}

impl AppState {
    /// Builds the state; existing labels and sessions next to `labels_path`
    /// are picked up so sessions resume where they stopped.
    pub fn new(
        segments: Vec<PlaySegment>,
        weak: BTreeMap<String, PlayClass>,
        labels_path: PathBuf,
        quota: usize,
        seed: u64,
    ) -> Result<Self> {
        let (queue, warnings) = sample_for_annotation(&weak, quota, seed);
        for w in warnings {
            log::warn!("{w}");
        }
        let segments: BTreeMap<String, PlaySegment> =
            segments.into_iter().map(|s| (s.segment_id.clone(), s)).collect();
        if let Some(missing) = queue.iter().find(|id| !segments.contains_key(*id)) {
            return Err(Error::Mismatch(format!("weak label for unknown segment {missing}")));
        }
        let labels = if labels_path.exists() { read_labels(&labels_path)? } else { Vec::new() };
        let sessions_path = sessions_path(&labels_path);
        let sessions = if sessions_path.exists() {
            let text = fs::read_to_string(&sessions_path).map_err(|e| Error::io(&sessions_path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            BTreeMap::new()
        };
        Ok(Self {
            segments,
            weak,
            queue,
            labels_path,
            sessions_path,
            labels: tokio::sync::Mutex::new(labels),
            sessions: Mutex::new(sessions),
        })
    }

    pub fn queue(&self) -> &[String] {
        &self.queue
    }
}

pub fn sessions_path(labels_path: &Path) -> PathBuf {
    let mut s = labels_path.as_os_str().to_owned();
    s.push(".sessions.json");
    PathBuf::from(s)
}

/// Writes to a temporary sibling and renames it into place, so readers and
/// crashes never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Debug, Serialize)]
pub struct ObjectView {
    pub id: String,
    pub role: Role,
    pub points: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize)]
pub struct SegmentView {
    pub segment_id: String,
    pub dt: f64,
    pub objects: Vec<ObjectView>,
    pub weak_label: Option<PlayClass>,
}

fn segment_view(state: &AppState, seg: &PlaySegment) -> SegmentView {
    SegmentView {
        segment_id: seg.segment_id.clone(),
        dt: seg.dt,
        objects: (0..seg.object_ids.len())
            .map(|o| ObjectView {
                id: seg.object_ids[o].clone(),
                role: Role::of_object(o),
                points: seg.trajectory(o),
            })
            .collect(),
        weak_label: state.weak.get(&seg.segment_id).copied(),
    }
}

fn court() -> serde_json::Value {
    json!({
        "length_ft": 94.0,
        "width_ft": 50.0,
        "half_court": { "x": [0.0, 50.0], "y": [47.0, 94.0] },
        "basket": [25.0, 88.75],
        "baskets_raw": [[5.25, 25.0], [88.75, 25.0]],
    })
}

#[derive(Debug, Deserialize)]
pub struct SessionQuery {
    pub session_id: Option<String>,
    pub annotator: Option<String>,
}

fn persist_sessions(state: &AppState, sessions: &BTreeMap<String, Session>) -> std::io::Result<()> {
    let text = serde_json::to_vec_pretty(sessions).expect("sessions serialize");
    write_atomic(&state.sessions_path, &text)
}

async fn get_session(State(state): State<Arc<AppState>>, Query(q): Query<SessionQuery>) -> Response {
    let mut sessions = state.sessions.lock().expect("session lock");
    let id = q
        .session_id
        .unwrap_or_else(|| format!("s{:016x}", rand::rng().random::<u64>()));
    let session = sessions.entry(id.clone()).or_insert_with(|| Session {
        session_id: id.clone(),
        annotator: q.annotator.clone().unwrap_or_else(|| "anonymous".into()),
        cursor: 0,
    });
    let body = json!({
        "session_id": session.session_id,
        "annotator": session.annotator,
        "cursor": session.cursor,
        "queue_length": state.queue.len(),
        "labels": PlayClass::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
        "court": court(),
    });
    if let Err(e) = persist_sessions(&state, &sessions) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    Json(body).into_response()
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub session_id: String,
}

async fn get_next(State(state): State<Arc<AppState>>, Query(q): Query<NextQuery>) -> Response {
    let cursor = match state.sessions.lock().expect("session lock").get(&q.session_id) {
        Some(s) => s.cursor,
        None => return error(StatusCode::NOT_FOUND, format!("unknown session {}", q.session_id)),
    };
    let remaining = state.queue.len() - cursor;
    let segment = state.queue.get(cursor).map(|id| segment_view(&state, &state.segments[id]));
    Json(json!({
        "done": segment.is_none(),
        "cursor": cursor,
        "remaining": remaining,
        "segment": segment,
    }))
    .into_response()
}

async fn get_segment(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.segments.get(&id) {
        Some(seg) => Json(segment_view(&state, seg)).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown segment {id}")),
    }
}

#[derive(Debug, Deserialize)]
pub struct LabelPost {
    pub segment_id: String,
    pub label: String,
    pub annotator: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

async fn post_label(State(state): State<Arc<AppState>>, body: Option<Json<serde_json::Value>>) -> Response {
    let Some(Json(body)) = body else {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "body must be a JSON object");
    };
    let post: LabelPost = match serde_json::from_value(body) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let label: PlayClass = match post.label.parse() {
        Ok(l) => l,
        Err(_) => {
            return error(
                StatusCode::UNPROCESSABLE_ENTITY,
                format!("label must be one of pick_and_roll, handoff, other; got {:?}", post.label),
            )
        }
    };
    if !state.segments.contains_key(&post.segment_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown segment {}", post.segment_id));
    }
    if post.annotator.trim().is_empty() {
        return error(StatusCode::UNPROCESSABLE_ENTITY, "annotator must not be empty");
    }

    // one writer at a time; a repeated POST (a client retry) is acknowledged
    // without writing a second record
    let mut labels = state.labels.lock().await;
    let existing = labels
        .iter()
        .find(|r| r.segment_id == post.segment_id && r.source == LabelSource::Manual)
        .cloned();
    let (record, stored) = match existing {
        Some(r) => (r, false),
        None => {
            let record = LabelRecord {
                segment_id: post.segment_id.clone(),
                label,
                source: LabelSource::Manual,
                key_frame: None,
                rule_version: None,
                annotator: Some(post.annotator.clone()),
                timestamp: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
            };
            let mut text = String::new();
            for r in labels.iter().chain(std::iter::once(&record)) {
                text.push_str(&r.to_line());
                text.push('\n');
            }
            if let Err(e) = write_atomic(&state.labels_path, text.as_bytes()) {
                return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            }
            labels.push(record.clone());
            (record, true)
        }
    };
    drop(labels);

    let mut cursor = None;
    if let Some(sid) = &post.session_id {
        let mut sessions = state.sessions.lock().expect("session lock");
        if let Some(s) = sessions.get_mut(sid) {
            if state.queue.get(s.cursor) == Some(&post.segment_id) {
                s.cursor += 1;
            }
            cursor = Some(s.cursor);
            if let Err(e) = persist_sessions(&state, &sessions) {
                return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
            }
        }
    }
    let status = if stored { StatusCode::CREATED } else { StatusCode::OK };
    (status, Json(json!({ "stored": stored, "record": record, "cursor": cursor }))).into_response()
}

async fn get_labels(State(state): State<Arc<AppState>>) -> Response {
    let labels = state.labels.lock().await;
    Json(labels.clone()).into_response()
}

async fn index_page() -> Html<&'static str> {
    Html(
        "<!doctype html><meta charset=\"utf-8\"><title>nets annotate</title>\
         <p>The annotation API is running under <code>/api</code>. \
         Start the server with <code>--assets DIR</code> to serve the browser client.</p>",
    )
}

pub fn router(state: Arc<AppState>, assets: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/session", get(get_session))
        .route("/api/segments/next", get(get_next))
        .route("/api/segments/{id}", get(get_segment))
        .route("/api/labels", get(get_labels).post(post_label))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.route("/", get(index_page)),
    }
}

/// Loads the inputs and serves until interrupted. A busy port is an I/O error.
pub fn serve_blocking(a: &ServeArgs) -> Result<()> {
    let segments = read_store(&a.segments)?;
    let weak = label_map(&read_labels(&a.weak_labels)?)?;
    let state = Arc::new(AppState::new(segments, weak, a.output.clone(), a.quota, a.seed)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    rt.block_on(async {
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], a.port));
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(format!("port {}", a.port), e))?;
        log::info!("annotation service on http://{addr} ({} queued segments)", state.queue.len());
        axum::serve(listener, router(state, a.assets.as_deref()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io("<server>", e))
    })
}
