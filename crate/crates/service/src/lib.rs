//! JSON-over-HTTP front end: template recommendation, the active template
//! listing, relevance annotation and the aggregated evaluation report.

mod config;
mod state;

pub use config::{ServiceConfig, DEFAULT_PORT};
pub use state::{
    AnnotationReceipt, AnnotationRequest, AppState, Engine, Health, ListedTemplate,
    RecommendRequest, RecommendResponse, RecommendedTemplate, Session, TemplateListing,
};

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use replykit_core::encoder::EncoderError;
use replykit_core::eval::EvalError;
use replykit_core::retrieval::RetrievalError;
use replykit_core::templates::TemplateError;
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("pool was built from model {pool} but the checkpoint is {model}")]
    PoolMismatch { pool: String, model: String },
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("request body larger than the configured limit")]
    PayloadTooLarge,
    #[error("no model loaded")]
    ModelNotLoaded,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(EvalError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::PayloadTooLarge => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::ModelNotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() && status != StatusCode::SERVICE_UNAVAILABLE {
            log::error!("{self}");
        }
        (
            status,
            Json(serde_json::json!({ "error": self.to_string() })),
        )
            .into_response()
    }
}

/// Malformed JSON is a 400; well-formed JSON of the wrong shape is a 422.
fn body<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(JsonRejection::JsonDataError(e)) => Err(ServiceError::Unprocessable(e.body_text())),
        Err(e) if e.status() == StatusCode::PAYLOAD_TOO_LARGE => Err(ServiceError::PayloadTooLarge),
        Err(e) => Err(ServiceError::BadRequest(e.body_text())),
    }
}

/// Runs blocking work (scoring, file I/O) off the async executor.
async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))?
}

fn ok<T: Serialize>(status: StatusCode, v: T) -> Response {
    (status, Json(v)).into_response()
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<RecommendRequest>, JsonRejection>,
) -> Response {
    let result = match body(payload) {
        Ok(req) => blocking(state, move |s| s.recommend(req)).await,
        Err(e) => Err(e),
    };
    match result {
        Ok(r) => ok(StatusCode::OK, r),
        Err(e) => e.into_response(),
    }
}

async fn annotate(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Response {
    let result = match body(payload) {
        Ok(req) => blocking(state, move |s| s.annotate(req)).await,
        Err(e) => Err(e),
    };
    match result {
        Ok(r) => ok(StatusCode::CREATED, r),
        Err(e) => e.into_response(),
    }
}

async fn templates(State(state): State<Arc<AppState>>) -> Response {
    match state.templates() {
        Ok(r) => ok(StatusCode::OK, r),
        Err(e) => e.into_response(),
    }
}

async fn report(State(state): State<Arc<AppState>>) -> Response {
    match blocking(state, |s| s.report()).await {
        Ok(r) => ok(StatusCode::OK, r),
        Err(e) => e.into_response(),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    match blocking(state, |s| Ok(s.health())).await {
        Ok(r) => ok(StatusCode::OK, r),
        Err(e) => e.into_response(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/v1/recommend", post(recommend))
        .route("/v1/templates", get(templates))
        .route("/v1/annotations", post(annotate))
        .route("/v1/report", get(report))
        .route("/v1/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(state: AppState) -> Result<(), ServiceError> {
    let addr = state.config.listen;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("shutting down");
        })
        .await?;
    Ok(())
}
