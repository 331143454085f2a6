use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use erflow_core::pipeline::{IncrementalResolver, ProfileSelector, RecordInput};
use erflow_core::store::StoreBackend;
use erflow_core::{Error, RuntimeConfig};
use serde::Deserialize;
use serde_json::json;

use crate::batch::{exit_code, EXIT_CONFIG, EXIT_RUNTIME};

type Shared = Arc<RwLock<IncrementalResolver>>;

pub fn run(config: &Path, listen: &str, store: Option<PathBuf>) -> u8 {
    let mut cfg = match RuntimeConfig::from_path(config) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("erflow: {}: {e}", config.display());
            return EXIT_CONFIG;
        }
    };
    if let Some(path) = store {
        cfg.store = Some(StoreBackend::File { path });
    }
    let resolver = match IncrementalResolver::new(cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("erflow: cannot start: {e}");
            return exit_code(&e);
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("erflow: {e}");
            return EXIT_RUNTIME;
        }
    };
    runtime.block_on(serve(resolver, listen))
}

async fn serve(resolver: IncrementalResolver, listen: &str) -> u8 {
    let listener = match tokio::net::TcpListener::bind(listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("erflow: cannot bind {listen}: {e}");
            return EXIT_RUNTIME;
        }
    };
    match listener.local_addr() {
        Ok(addr) => eprintln!("erflow: listening on {addr}"),
        Err(e) => {
            eprintln!("erflow: {e}");
            return EXIT_RUNTIME;
        }
    }
    let app = router(Arc::new(RwLock::new(resolver)));
    if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown()).await {
        eprintln!("erflow: server error: {e}");
        return EXIT_RUNTIME;
    }
    0
}

async fn shutdown() {
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
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/records", post(ingest))
        .route("/profiles", get(profiles))
        .route("/report", get(report))
        .route("/health", get(health))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::InvalidInput(_)
            | Error::InvalidArgument(_)
            | Error::Record { .. }
            | Error::Config { .. }
            | Error::Json(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!("{e}");
        }
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn poisoned() -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, "resolver state poisoned".into())
}

async fn ingest(State(state): State<Shared>, body: String) -> Result<Response, ApiError> {
    let input = RecordInput::from_json(&body)?;
    // single writer; store IO happens off the async workers
    let outcome = tokio::task::spawn_blocking(move || {
        let mut resolver = state.write().map_err(|_| poisoned())?;
        resolver.ingest(input).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(outcome).into_response())
}

#[derive(Deserialize)]
struct ProfileQuery {
    ref_id: Option<String>,
    attr: Option<String>,
    value: Option<String>,
}

async fn profiles(State(state): State<Shared>, Query(q): Query<ProfileQuery>) -> Result<Response, ApiError> {
    let selector = match (q.ref_id, q.attr, q.value) {
        (Some(id), None, None) => ProfileSelector::ByRefId(id),
        (None, Some(name), Some(value)) => ProfileSelector::ByAttributeEquals { name, value },
        _ => {
            return Err(ApiError(
                StatusCode::BAD_REQUEST,
                "expected either ref_id or attr and value".into(),
            ))
        }
    };
    let resolver = state.read().map_err(|_| poisoned())?;
    let profiles = resolver.query(&selector)?;
    Ok(Json(json!({ "profiles": profiles })).into_response())
}

async fn report(State(state): State<Shared>) -> Result<Response, ApiError> {
    let resolver = state.read().map_err(|_| poisoned())?;
    Ok(Json(resolver.report()).into_response())
}

async fn health(State(state): State<Shared>) -> Result<Response, ApiError> {
    let resolver = state.read().map_err(|_| poisoned())?;
    Ok(Json(json!({ "status": "ok", "store_version": resolver.store().latest_version() })).into_response())
}
