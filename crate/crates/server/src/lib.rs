//! axum service exposing the surrogate's inference API.
//!
//! Model work runs on the blocking pool; the shared [`ServiceState`] is
//! read-only, so concurrent identical requests yield identical bodies.

use std::future::Future;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fefet_core::interface::{error_status, ErrorResponse, PredictRequest, RetentionRequest, ServiceState};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

pub use fefet_core::interface::SCHEMA_VERSION;

/// Error response carrying a status and a JSON body.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorResponse,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, msg: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorResponse::new(kind, msg),
        }
    }
}

impl From<fefet_core::Error> for ApiError {
    fn from(e: fefet_core::Error) -> Self {
        let (code, kind) = error_status(&e);
        if code >= 500 {
            tracing::error!(error = %e, "request failed");
        }
        Self::new(StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR), kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_request", format!("malformed body: {e}")))
}

/// Runs model work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> fefet_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => Ok(Json(r?)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
    }
}

async fn health(State(s): State<Arc<ServiceState>>) -> impl IntoResponse {
    Json(s.health())
}

async fn meta(State(s): State<Arc<ServiceState>>) -> impl IntoResponse {
    Json(s.meta())
}

async fn predict(State(s): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let req: PredictRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    blocking(move || s.predict(&req)).await.into_response()
}

async fn retention(State(s): State<Arc<ServiceState>>, body: Bytes) -> Response {
    let req: RetentionRequest = match parse(&body) {
        Ok(r) => r,
        Err(e) => return e.into_response(),
    };
    blocking(move || s.retention(&req)).await.into_response()
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
}

/// Builds the application; `static_dir` serves a UI bundle at `/`.
pub fn router(state: Arc<ServiceState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/meta", get(meta))
        .route("/predict", post(predict))
        .route("/retention", post(retention))
        .fallback(api_not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state);
    let app = Router::new().nest("/api", api);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(listener: TcpListener, app: Router, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}
