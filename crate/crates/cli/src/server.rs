//! Read-only HTTP API over one [`DatasetSnapshot`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fairquota::reporting::Format;
use fairquota::{emit, Report};
use serde::Serialize;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::service::{AuditQuery, BalanceRequest, CurveQuery, DatasetSnapshot, ServiceError, TradeoffQuery};

pub const VERSION_HEADER: &str = "x-dataset-version";

type Snapshot = Arc<DatasetSnapshot>;

#[derive(Serialize)]
struct ErrorBody<'a> {
    status: u16,
    error: &'a str,
}

fn error(status: StatusCode, msg: &str) -> Response {
    let body = serde_json::to_string_pretty(&ErrorBody { status: status.as_u16(), error: msg })
        .expect("error body serializes")
        + "\n";
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn service_error(e: ServiceError) -> Response {
    let status = match e {
        ServiceError::Invalid(_) => StatusCode::BAD_REQUEST,
        ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
    };
    error(status, &e.to_string())
}

/// Renders `result` exactly as the CLI's `--format json` would.
fn respond<R: Report>(snap: &DatasetSnapshot, result: Result<R, ServiceError>) -> Response {
    let body = match result.and_then(|r| emit(&r, Format::Json).map_err(ServiceError::from)) {
        Ok(b) => b,
        Err(e) => return service_error(e),
    };
    let mut res = ([(header::CONTENT_TYPE, "application/json")], body).into_response();
    if let Ok(v) = HeaderValue::from_str(snap.version()) {
        res.headers_mut().insert(VERSION_HEADER, v);
    }
    res
}

/// Runs a computation off the async workers.
async fn compute<R, F>(snap: Snapshot, f: F) -> Response
where
    R: Report + Send + 'static,
    F: FnOnce(&DatasetSnapshot) -> Result<R, ServiceError> + Send + 'static,
{
    let task = tokio::task::spawn_blocking(move || {
        let r = f(&snap);
        respond(&snap, r)
    });
    match task.await {
        Ok(res) => res,
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, &e.to_string()),
    }
}

async fn dataset(State(snap): State<Snapshot>) -> Response {
    let summary = snap.summary().clone();
    respond(&snap, Ok(summary))
}

async fn audit(State(snap): State<Snapshot>, q: Result<Query<AuditQuery>, QueryRejection>) -> Response {
    match q {
        Ok(Query(q)) => compute(snap, move |s| s.audit(&q)).await,
        Err(e) => error(StatusCode::BAD_REQUEST, &e.body_text()),
    }
}

async fn balance(State(snap): State<Snapshot>, body: Result<Json<BalanceRequest>, JsonRejection>) -> Response {
    match body {
        Ok(Json(r)) => compute(snap, move |s| s.balance(&r)).await,
        Err(e) => error(StatusCode::BAD_REQUEST, &e.body_text()),
    }
}

async fn tradeoff(State(snap): State<Snapshot>, q: Result<Query<TradeoffQuery>, QueryRejection>) -> Response {
    match q {
        Ok(Query(q)) => compute(snap, move |s| s.tradeoff(&q)).await,
        Err(e) => error(StatusCode::BAD_REQUEST, &e.body_text()),
    }
}

async fn curve(State(snap): State<Snapshot>, q: Result<Query<CurveQuery>, QueryRejection>) -> Response {
    match q {
        Ok(Query(q)) => compute(snap, move |s| s.curve(&q)).await,
        Err(e) => error(StatusCode::BAD_REQUEST, &e.body_text()),
    }
}

async fn not_found() -> Response {
    error(StatusCode::NOT_FOUND, "unknown endpoint")
}

async fn method_not_allowed() -> Response {
    error(StatusCode::METHOD_NOT_ALLOWED, "method not allowed")
}

/// The API routes, plus static files from `assets` for everything outside
/// `/api` when given.
pub fn router(snapshot: Snapshot, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/dataset", get(dataset))
        .route("/api/audit", get(audit))
        .route("/api/balance", post(balance))
        .route("/api/tradeoff", get(tradeoff))
        .route("/api/curve", get(curve))
        .route("/api/{*rest}", get(not_found).post(not_found))
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(snapshot);
    let app = match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    app.layer(CorsLayer::permissive())
}

/// Serves until interrupted.
pub async fn serve(snapshot: DatasetSnapshot, addr: SocketAddr, assets: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!(
        "serving {} rows (version {}) on http://{}",
        snapshot.summary().rows,
        snapshot.version(),
        listener.local_addr()?
    );
    let app = router(Arc::new(snapshot), assets);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
