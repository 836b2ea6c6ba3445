//! HTTP front end for a [`TriageStore`].
//!
//! Reads share a lock; label writes take it exclusively and queue behind each
//! other. Advancing a round refuses to wait: if any other request holds the
//! lock it answers 409.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, TryLockError};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::{Body, Bytes};
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mtriage_core::scoring::{ScoreMatrix, SCORE_NAMES};
use mtriage_core::synth::{image_path, read_metadata, METADATA_FILE};
use mtriage_core::taxonomy::TriageCategory;
use mtriage_core::triage::{LabelRecord, QueueItem, QueueMode, TriageError, TriageStore, Verdict};

pub const DEFAULT_PAGE: usize = 24;
pub const MAX_PAGE: usize = 1000;

/// An error response: status plus a JSON body `{"error": ..}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, body: json!({ "error": message.into() }) }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<TriageError> for ApiError {
    fn from(e: TriageError) -> Self {
        let status = match &e {
            TriageError::Invalid(_) | TriageError::Scoring(_) => StatusCode::BAD_REQUEST,
            TriageError::Type(t) => {
                return Self {
                    status: StatusCode::BAD_REQUEST,
                    body: json!({ "error": e.to_string(), "allowed": t.allowed }),
                }
            }
            TriageError::UnknownImage(_) | TriageError::NoScores(_) => StatusCode::NOT_FOUND,
            TriageError::ClosedRound { .. }
            | TriageError::AlreadyAdvanced { .. }
            | TriageError::NothingLabeled(_)
            | TriageError::QueueLocked(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct AppState {
    store: RwLock<TriageStore>,
    images: BTreeMap<u32, PathBuf>,
}

impl AppState {
    /// `corpus` is a generator output directory; its images back
    /// `GET /api/image/{id}`.
    pub fn new(store: TriageStore, corpus: Option<&Path>) -> std::io::Result<Self> {
        let mut images = BTreeMap::new();
        if let Some(dir) = corpus {
            let records = read_metadata(&dir.join(METADATA_FILE)).map_err(std::io::Error::other)?;
            images.extend(records.iter().map(|r| (r.image_id, image_path(dir, r))));
        }
        Ok(Self { store: RwLock::new(store), images })
    }

    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, TriageStore> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn store_mut(&self) -> std::sync::RwLockWriteGuard<'_, TriageStore> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/session", get(session))
        .route("/api/session/advance", post(advance))
        .route("/api/queue", get(queue))
        .route("/api/image/{id}", get(image))
        .route("/api/image/{id}/scores", get(image_scores))
        .route("/api/labels", post(label))
        .route("/api/scores", post(load_scores))
        .route("/api/export", get(export))
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

async fn session(State(st): State<Arc<AppState>>) -> impl IntoResponse {
    Json(st.store().session().summary())
}

#[derive(Debug, Deserialize)]
struct Page {
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueEntry {
    pub image_id: u32,
    pub rank: usize,
    pub ensemble: f64,
    pub scores: Vec<f64>,
    pub verdict: Option<Verdict>,
    #[serde(rename = "type")]
    pub kind: Option<TriageCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueuePage {
    pub round: u32,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<QueueEntry>,
}

fn entry(store: &TriageStore, rank: usize, q: &QueueItem) -> QueueEntry {
    let s = store.session();
    let label = s.effective_label(q.image_id).filter(|l| l.round == s.round);
    QueueEntry {
        image_id: q.image_id,
        rank,
        ensemble: q.ensemble,
        scores: q.scores.clone(),
        verdict: label.map(|l| l.verdict),
        kind: label.and_then(|l| l.kind),
    }
}

async fn queue(State(st): State<Arc<AppState>>, page: Result<Query<Page>, QueryRejection>) -> ApiResult<Json<QueuePage>> {
    let Query(page) = page.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let limit = page.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let offset = page.offset.unwrap_or(0);
    let store = st.store();
    let s = store.session();
    if s.mode.is_none() {
        return Err(TriageError::NoScores(s.round).into());
    }
    let q = s.queue();
    let items = q.iter().enumerate().skip(offset).take(limit).map(|(i, item)| entry(&store, i, item)).collect();
    Ok(Json(QueuePage { round: s.round, total: q.len(), offset, limit, items }))
}

fn parse_id(raw: &str) -> ApiResult<u32> {
    raw.parse().map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown image {raw:?}")))
}

async fn image(State(st): State<Arc<AppState>>, UrlPath(raw): UrlPath<String>) -> ApiResult<Response> {
    let id = parse_id(&raw)?;
    let path = st.images.get(&id).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown image {id}")))?;
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("image {id}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], Body::from(bytes)).into_response())
}

async fn image_scores(State(st): State<Arc<AppState>>, UrlPath(raw): UrlPath<String>) -> ApiResult<Response> {
    let id = parse_id(&raw)?;
    let store = st.store();
    let s = store.session();
    let (rank, item) = s
        .queue()
        .iter()
        .enumerate()
        .find(|(_, q)| q.image_id == id)
        .ok_or(TriageError::UnknownImage(id))?;
    let e = entry(&store, rank, item);
    Ok(Json(json!({
        "image_id": id,
        "round": s.round,
        "rank": rank,
        "ensemble": e.ensemble,
        "scores": SCORE_NAMES.iter().zip(&e.scores).map(|(n, v)| json!({ "name": n, "value": v })).collect::<Vec<_>>(),
        "verdict": e.verdict,
        "type": e.kind,
    }))
    .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelBody {
    image_id: u32,
    round: Option<u32>,
    verdict: Verdict,
    #[serde(rename = "type")]
    kind: Option<String>,
    reviewer: String,
    timestamp: Option<u64>,
}

fn now_millis() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

async fn label(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let b: LabelBody = parse_body(&body)?;
    let kind = b.kind.as_deref().map(str::parse::<TriageCategory>).transpose().map_err(TriageError::from)?;
    let mut store = st.store_mut();
    let record = LabelRecord {
        image_id: b.image_id,
        round: b.round.unwrap_or(store.session().round),
        verdict: b.verdict,
        kind,
        reviewer: b.reviewer,
        timestamp: b.timestamp.unwrap_or_else(now_millis),
    };
    let changed = store.record_label(record.clone())?;
    let effective = store.session().effective_label(record.image_id).cloned();
    let status = if changed { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "changed": changed, "label": effective }))).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    round: Option<u32>,
    #[serde(default)]
    force: bool,
}

async fn advance(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let b: AdvanceBody = if body.is_empty() { AdvanceBody::default() } else { parse_body(&body)? };
    let mut store = match st.store.try_write() {
        Ok(g) => g,
        Err(TryLockError::Poisoned(p)) => p.into_inner(),
        Err(TryLockError::WouldBlock) => {
            return Err(ApiError::new(StatusCode::CONFLICT, "session busy; retry the advance"));
        }
    };
    let round = b.round.unwrap_or(store.session().round);
    let out = store.advance_round(round, b.force)?;
    Ok(Json(out).into_response())
}

#[derive(Debug, Deserialize)]
struct ScoresQuery {
    top_n: Option<usize>,
    fraction: Option<f64>,
}

/// Loads the current round's scores CSV (body) and builds its queue.
async fn load_scores(State(st): State<Arc<AppState>>, q: Result<Query<ScoresQuery>, QueryRejection>, body: Bytes) -> ApiResult<Response> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mode = match (q.top_n, q.fraction) {
        (Some(top_n), None) => QueueMode::PerScoreUnion { top_n },
        (None, Some(fraction)) => QueueMode::EnsembleTopFraction { fraction },
        (None, None) => QueueMode::PerScoreUnion { top_n: 200 },
        _ => return Err(ApiError::bad_request("give top_n or fraction, not both")),
    };
    let (matrix, _) = ScoreMatrix::read_csv(body.as_ref()).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut store = st.store_mut();
    let n = store.load_scores(&matrix, mode)?;
    Ok((StatusCode::CREATED, Json(json!({ "round": store.session().round, "queue_size": n, "mode": mode })))
        .into_response())
}

async fn export(State(st): State<Arc<AppState>>) -> impl IntoResponse {
    let csv = st.store().session().export_csv();
    ([(header::CONTENT_TYPE, "text/csv")], csv)
}
