use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use acne_core::face_patches::ExtractionPath;
use acne_core::image_io;
use acne_core::model::{fingerprint, ImageScore, RegressionHead, Scorer, FORMAT_VERSION};
use acne_core::{Error, PatchKind, Rect};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;
use crate::store::{AssessmentRecord, AssessmentStore, FileStore, MemoryStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchResult {
    pub kind: PatchKind,
    /// Clamped patch score.
    pub score: f64,
    pub raw: f64,
    pub rect: Rect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub score: f64,
    pub class: u8,
    pub patches: Vec<PatchResult>,
    pub extraction: ExtractionPath,
    pub pipeline_version: String,
}

impl ScoreResponse {
    pub fn new(s: &ImageScore, pipeline_version: &str) -> Self {
        Self {
            score: s.final_score.value(),
            class: s.class.value(),
            patches: s
                .patch_scores
                .iter()
                .map(|p| PatchResult {
                    kind: p.kind,
                    score: p.score.value(),
                    raw: p.raw,
                    rect: p.rect,
                })
                .collect(),
            extraction: s.extraction,
            pipeline_version: pipeline_version.to_owned(),
        }
    }
}

/// JSON error body `{code, message}` with its status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }
}

/// Machine-readable code for a scoring failure.
pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Decode(_) | Error::InvalidImage(_) => "bad_image",
        Error::NoFaceFound => "no_face",
        Error::Geometry(_) => "insufficient_skin",
        Error::Backend(_) => "backend_unavailable",
        _ => "internal",
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = error_code(&e);
        let status = match code {
            "bad_image" => StatusCode::BAD_REQUEST,
            "no_face" | "insufficient_skin" => StatusCode::UNPROCESSABLE_ENTITY,
            "backend_unavailable" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, code, e.to_string())
    }
}

/// Package version plus head format and fingerprint.
pub fn pipeline_version(head: &RegressionHead) -> String {
    format!(
        "acne-{}+head-v{FORMAT_VERSION}-{}",
        env!("CARGO_PKG_VERSION"),
        fingerprint(head)
    )
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "code": self.code, "message": self.message }));
        (self.status, body).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs())
    })
}

#[derive(Debug, Default)]
struct HistoryCursor {
    next_seq: u64,
    last_timestamp: HashMap<String, u64>,
}

/// Shared state behind every route.
pub struct AppState {
    scorer: Result<Arc<Scorer>, String>,
    backbone_loaded: bool,
    pipeline_version: String,
    store: Arc<dyn AssessmentStore>,
    cursor: Mutex<HistoryCursor>,
    clock: Clock,
    permits: Arc<Semaphore>,
    strict_users: bool,
    retain_dir: Option<PathBuf>,
    max_body_bytes: usize,
}

/// Options for [`AppState::new`].
pub struct StateOptions {
    pub store: Arc<dyn AssessmentStore>,
    pub clock: Clock,
    pub workers: usize,
    pub strict_users: bool,
    pub retain_dir: Option<PathBuf>,
    pub max_body_bytes: usize,
}

impl Default for StateOptions {
    fn default() -> Self {
        Self {
            store: Arc::new(MemoryStore::new()),
            clock: system_clock(),
            workers: 1,
            strict_users: false,
            retain_dir: None,
            max_body_bytes: crate::config::DEFAULT_MAX_BODY_BYTES,
        }
    }
}

impl AppState {
    /// `scorer` is `Err(reason)` when the pipeline failed to load; scoring
    /// routes then answer 503. `backbone_loaded` is reported by health.
    pub fn new(scorer: Result<Scorer, String>, backbone_loaded: bool, opts: StateOptions) -> Self {
        let pipeline_version = match &scorer {
            Ok(s) => pipeline_version(s.head()),
            Err(_) => format!("acne-{}", env!("CARGO_PKG_VERSION")),
        };
        let workers = match &scorer {
            Ok(s) if s.is_serialized() => 1,
            _ => opts.workers.max(1),
        };
        let mut cursor = HistoryCursor::default();
        for r in opts.store.all() {
            let seq = r
                .assessment_id
                .strip_prefix('a')
                .and_then(|s| s.parse::<u64>().ok())
                .unwrap_or(0);
            cursor.next_seq = cursor.next_seq.max(seq + 1);
            let last = cursor.last_timestamp.entry(r.user_id.clone()).or_default();
            *last = (*last).max(r.timestamp);
        }
        Self {
            scorer: scorer.map(Arc::new),
            backbone_loaded,
            pipeline_version,
            store: opts.store,
            cursor: Mutex::new(cursor),
            clock: opts.clock,
            permits: Arc::new(Semaphore::new(workers)),
            strict_users: opts.strict_users,
            retain_dir: opts.retain_dir,
            max_body_bytes: opts.max_body_bytes,
        }
    }

    /// Loads backends, head and store as configured. Pipeline failures are
    /// kept as the unavailable reason; store failures are returned.
    pub fn from_config(cfg: &ServiceConfig) -> acne_core::Result<Self> {
        let backbone = cfg.pipeline.embedding_backend();
        let backbone_loaded = backbone.is_ok();
        let scorer = backbone
            .and_then(|emb| {
                let head = cfg.pipeline.load_head()?;
                Scorer::new(
                    cfg.pipeline.landmark_backend()?,
                    cfg.pipeline.eye_backend()?,
                    emb,
                    head,
                    Default::default(),
                )
            })
            .map_err(|e| e.to_string());
        let store: Arc<dyn AssessmentStore> = match &cfg.store_path {
            Some(p) => Arc::new(FileStore::open(p).map_err(|e| Error::Config(e.to_string()))?),
            None => Arc::new(MemoryStore::new()),
        };
        Ok(Self::new(
            scorer,
            backbone_loaded,
            StateOptions {
                store,
                clock: system_clock(),
                workers: cfg.workers,
                strict_users: cfg.strict_users,
                retain_dir: cfg.retained_image_dir(),
                max_body_bytes: cfg.max_body_bytes,
            },
        ))
    }

    pub fn pipeline_version(&self) -> &str {
        &self.pipeline_version
    }

    pub fn unavailable_reason(&self) -> Option<&str> {
        self.scorer.as_ref().err().map(String::as_str)
    }

    /// Scores an upload; also returns the hex digest of its decoded pixels.
    async fn score_bytes(&self, body: Bytes) -> ApiResult<(ScoreResponse, String)> {
        let scorer = self
            .scorer
            .as_ref()
            .map_err(|r| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", r.clone()))?
            .clone();
        let _permit = self
            .permits
            .clone()
            .acquire_owned()
            .await
            .expect("semaphore is never closed");
        let result = tokio::task::spawn_blocking(move || {
            let img = image_io::decode(&body)?;
            let digest = hex_digest(&img.digest());
            scorer.score(&digest, &img).map(|s| (s, digest))
        })
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
        Ok((ScoreResponse::new(&result.0, &self.pipeline_version), result.1))
    }

    fn retain(&self, name: &str, body: &[u8]) {
        let Some(dir) = &self.retain_dir else { return };
        let ext = if body.starts_with(b"\x89PNG") { "png" } else { "jpg" };
        let path = dir.join(format!("{name}.{ext}"));
        let res = std::fs::create_dir_all(dir)
            .map_err(|e| e.to_string())
            .and_then(|()| image_io::write_atomic(&path, body).map_err(|e| e.to_string()));
        if let Err(e) = res {
            tracing::warn!("could not retain upload {}: {e}", path.display());
        }
    }

    /// Assigns id and timestamp, then persists, all under one lock so that
    /// history order matches arrival order per user.
    fn record(&self, user_id: &str, result: ScoreResponse) -> ApiResult<AssessmentRecord> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|p| p.into_inner());
        let now = (self.clock)();
        let last = cursor.last_timestamp.get(user_id).copied().unwrap_or(0);
        let record = AssessmentRecord {
            assessment_id: format!("a{:012}", cursor.next_seq),
            user_id: user_id.to_owned(),
            timestamp: now.max(last),
            pipeline_version: self.pipeline_version.clone(),
            result,
        };
        self.store.append(&record).map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store", e.to_string())
        })?;
        cursor.next_seq += 1;
        cursor.last_timestamp.insert(user_id.to_owned(), record.timestamp);
        Ok(record)
    }
}

fn check_user(user_id: &str) -> ApiResult<()> {
    let ok = (1..=64).contains(&user_id.len())
        && user_id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b"-_.".contains(&b));
    if ok {
        Ok(())
    } else {
        Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "bad_user_id",
            "user id must be 1-64 characters of [A-Za-z0-9._-]",
        ))
    }
}

fn body(b: Result<Bytes, BytesRejection>) -> ApiResult<Bytes> {
    b.map_err(|r| {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "too_large"
        } else {
            "bad_body"
        };
        ApiError::new(status, code, r.body_text())
    })
}

async fn score(
    State(state): State<Arc<AppState>>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<Json<ScoreResponse>> {
    let b = body(b)?;
    let (resp, digest) = state.score_bytes(b.clone()).await?;
    state.retain(&digest, &b);
    Ok(Json(resp))
}

fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

async fn create_assessment(
    State(state): State<Arc<AppState>>,
    Path(user_id): Path<String>,
    b: Result<Bytes, BytesRejection>,
) -> ApiResult<(StatusCode, Json<AssessmentRecord>)> {
    check_user(&user_id)?;
    let b = body(b)?;
    let (resp, _) = state.score_bytes(b.clone()).await?;
    let st = state.clone();
    let record = tokio::task::spawn_blocking(move || st.record(&user_id, resp))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    state.retain(&record.assessment_id, &b);
    Ok((StatusCode::CREATED, Json(record)))
}

async fn list_assessments(
    State(state): State<Arc<AppState>>,
    Path(user_id): Path<String>,
) -> ApiResult<Json<Vec<AssessmentRecord>>> {
    check_user(&user_id)?;
    if state.strict_users && !state.store.has_user(&user_id) {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_user",
            format!("no assessments for {user_id:?}"),
        ));
    }
    Ok(Json(state.store.list(&user_id)))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match &state.scorer {
        Ok(_) => (
            StatusCode::OK,
            Json(json!({
                "status": "ok",
                "backbone_loaded": state.backbone_loaded,
                "head_version": FORMAT_VERSION,
                "pipeline_version": state.pipeline_version,
            })),
        )
            .into_response(),
        Err(reason) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({
                "status": "unavailable",
                "backbone_loaded": state.backbone_loaded,
                "head_version": null,
                "reason": reason,
            })),
        )
            .into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/v1/score", post(score))
        .route(
            "/v1/users/{user_id}/assessments",
            post(create_assessment).get(list_assessments),
        )
        .route("/v1/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}
