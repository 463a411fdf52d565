//! HTTP front end over [`af_core::review::ReviewStore`].
//!
//! All JSON routes live under `/api`; anything else is served from the UI
//! bundle directory when one is configured.

use af_core::review::{ComposeRequest, Decision, Rating, ReviewError, ReviewStore};
use axum::body::Body;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Redirect, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use tower_http::services::ServeDir;

pub const ANNOTATOR_HEADER: &str = "x-annotator";

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<ReviewStore>>,
    frames_root: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: ReviewStore, frames_root: Option<PathBuf>) -> Self {
        AppState {
            store: Arc::new(Mutex::new(store)),
            frames_root,
        }
    }

    pub fn store(&self) -> Arc<Mutex<ReviewStore>> {
        self.store.clone()
    }
}

pub struct ApiError(ReviewError);

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError(e)
    }
}

fn error_kind(e: &ReviewError) -> (StatusCode, &'static str) {
    match e {
        ReviewError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
        ReviewError::RubricMismatch { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "rubric_mismatch"),
        ReviewError::ScoreOutOfRange(_) => (StatusCode::UNPROCESSABLE_ENTITY, "score_out_of_range"),
        ReviewError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        ReviewError::DuplicateItem(_) => (StatusCode::CONFLICT, "duplicate_item"),
        ReviewError::NothingPassed => (StatusCode::CONFLICT, "nothing_passed"),
        ReviewError::CorruptLog { .. } | ReviewError::Io { .. } => {
            (StatusCode::INTERNAL_SERVER_ERROR, "storage")
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, kind) = error_kind(&self.0);
        (
            code,
            Json(json!({"error": kind, "message": self.0.to_string()})),
        )
            .into_response()
    }
}

fn not_found(what: String) -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(json!({"error": "not_found", "message": what})),
    )
        .into_response()
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: Option<String>,
}

async fn next_item(
    State(s): State<AppState>,
    Query(q): Query<NextQuery>,
    headers: HeaderMap,
) -> Response {
    let annotator = q
        .annotator
        .or_else(|| {
            headers
                .get(ANNOTATOR_HEADER)
                .and_then(|v| v.to_str().ok())
                .map(String::from)
        })
        .filter(|a| !a.trim().is_empty());
    let Some(annotator) = annotator else {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": "invalid", "message": "annotator is required"})),
        )
            .into_response();
    };
    let store = s.store.lock().expect("store lock poisoned");
    match store.state().next_item(&annotator) {
        Some(item) => Json(item).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

/// Run a write against the store off the async workers: appends are synced
/// to disk before the response is sent.
async fn write<T, F>(s: AppState, f: F) -> Result<T, ApiError>
where
    F: FnOnce(&mut ReviewStore) -> Result<T, ReviewError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        let mut store = s.store.lock().expect("store lock poisoned");
        f(&mut store)
    })
    .await
    .expect("store writer panicked")
    .map_err(ApiError)
}

async fn post_decision(
    State(s): State<AppState>,
    Json(d): Json<Decision>,
) -> Result<Response, ApiError> {
    let item_id = d.item_id.clone();
    let (progress, status) = write(s, move |st| {
        let p = st.submit_decision(d)?;
        Ok((p, st.state().status(&item_id)?))
    })
    .await?;
    Ok(Json(json!({"ok": true, "status": status, "progress": progress})).into_response())
}

async fn post_rating(
    State(s): State<AppState>,
    Json(r): Json<Rating>,
) -> Result<Response, ApiError> {
    let progress = write(s, move |st| st.submit_rating(r)).await?;
    Ok(Json(json!({"ok": true, "progress": progress})).into_response())
}

async fn post_compose(
    State(s): State<AppState>,
    Json(c): Json<ComposeRequest>,
) -> Result<Response, ApiError> {
    let item = write(s, move |st| st.compose(c)).await?;
    Ok((StatusCode::CREATED, Json(item)).into_response())
}

async fn get_item(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Response, ApiError> {
    let store = s.store.lock().expect("store lock poisoned");
    Ok(Json(store.state().item(&id)?).into_response())
}

async fn get_progress(State(s): State<AppState>) -> Response {
    let store = s.store.lock().expect("store lock poisoned");
    Json(store.state().progress()).into_response()
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("webp") => "image/webp",
        Some("gif") => "image/gif",
        _ => "application/octet-stream",
    }
}

async fn get_frame(
    State(s): State<AppState>,
    UrlPath((video_id, n)): UrlPath<(String, usize)>,
) -> Response {
    let uri = {
        let store = s.store.lock().expect("store lock poisoned");
        store
            .state()
            .qa_items()
            .iter()
            .find(|i| i.video.id == video_id)
            .map(|i| i.video.frame_uris.get(n).cloned())
    };
    let uri = match uri {
        None => return not_found(format!("unknown video {video_id}")),
        Some(None) => return not_found(format!("video {video_id} has no frame {n}")),
        Some(Some(u)) => u,
    };
    if uri.starts_with("http://") || uri.starts_with("https://") {
        return Redirect::temporary(&uri).into_response();
    }
    let rel = uri.strip_prefix("file://").unwrap_or(&uri);
    let path = match &s.frames_root {
        Some(root) if Path::new(rel).is_relative() => root.join(rel),
        _ => PathBuf::from(rel),
    };
    match tokio::fs::read(&path).await {
        Ok(bytes) => (
            [(header::CONTENT_TYPE, content_type(&path))],
            Body::from(bytes),
        )
            .into_response(),
        Err(_) => not_found(format!("frame file {} unavailable", path.display())),
    }
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/queue/next", get(next_item))
        .route("/decisions", post(post_decision))
        .route("/ratings", post(post_rating))
        .route("/compose", post(post_compose))
        .route("/items/{id}", get(get_item))
        .route("/progress", get(get_progress))
        .route("/frames/{video_id}/{n}", get(get_frame));
    let app = Router::new().nest("/api", api).with_state(state);
    match ui_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Bind and serve until ctrl-c. `ready` receives the bound address.
pub async fn serve(
    addr: SocketAddr,
    app: Router,
    ready: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    ready(listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
