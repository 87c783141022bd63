//! REST endpoints over [`Service`].

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State as Shared};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{ExportKind, Service, ServiceConfig, ServiceError};
use crate::annotation::Submission;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Storage(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = match &self {
            ServiceError::Invalid(violations) => {
                let list: Vec<_> = violations
                    .iter()
                    .map(|v| {
                        let mut obj = serde_json::to_value(v).expect("violations serialize");
                        obj["message"] = v.message().into();
                        obj
                    })
                    .collect();
                json!({ "error": self.to_string(), "violations": list })
            }
            _ => {
                if status.is_server_error() {
                    log::error!("{self}");
                }
                json!({ "error": self.to_string() })
            }
        };
        (status, Json(body)).into_response()
    }
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

/// Runs a blocking service call (log writes sync to disk) off the runtime.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::Config(format!("worker failed: {e}"))))
}

async fn get_task(Shared(svc): Shared<Arc<Service>>, headers: HeaderMap) -> Result<Response, ServiceError> {
    Ok(match svc.next_task(bearer(&headers))? {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn post_annotation(
    Shared(svc): Shared<Arc<Service>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let token = bearer(&headers).map(str::to_owned);
    // Unauthenticated callers learn nothing about the body format.
    svc.next_task(token.as_deref())?;
    let submission: Submission = parse(&body)?;
    let receipt = blocking(move || svc.submit(token.as_deref(), submission)).await?;
    Ok(Json(json!({
        "accepted": true,
        "seq": receipt.seq,
        "gold_resolved": receipt.gold_resolved,
    }))
    .into_response())
}

async fn get_progress(Shared(svc): Shared<Arc<Service>>, headers: HeaderMap) -> Result<Response, ServiceError> {
    Ok(Json(svc.progress(bearer(&headers))?).into_response())
}

async fn get_export(
    Shared(svc): Shared<Arc<Service>>,
    UrlPath(kind): UrlPath<String>,
    headers: HeaderMap,
) -> Result<Response, ServiceError> {
    let kind = match kind.as_str() {
        "qa" => ExportKind::Qa,
        "grammaticality" => ExportKind::Grammaticality,
        other => return Err(ServiceError::BadRequest(format!("unknown export `{other}`"))),
    };
    let file = svc.export(bearer(&headers), kind)?;
    let disposition = format!("attachment; filename=\"{}\"", file.file_name);
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(file.content_type)),
            (header::CONTENT_DISPOSITION, HeaderValue::from_str(&disposition).expect("ascii name")),
            (
                header::HeaderName::from_static("x-export-count"),
                HeaderValue::from(file.count),
            ),
            (
                header::HeaderName::from_static("x-export-unresolved"),
                HeaderValue::from(file.unresolved),
            ),
        ],
        file.body,
    )
        .into_response())
}

async fn post_load(
    Shared(svc): Shared<Arc<Service>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let token = bearer(&headers).map(str::to_owned);
    svc.progress(token.as_deref())?;
    let request = parse(&body)?;
    let receipt = blocking(move || svc.load(token.as_deref(), request)).await?;
    Ok(Json(receipt).into_response())
}

async fn post_assign(
    Shared(svc): Shared<Arc<Service>>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let token = bearer(&headers).map(str::to_owned);
    svc.progress(token.as_deref())?;
    let request = parse(&body)?;
    let response = blocking(move || svc.assign(token.as_deref(), request)).await?;
    Ok(Json(response).into_response())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

/// All API routes, plus the web UI bundle at `/` when `static_dir` is set.
pub fn router(service: Arc<Service>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/task", get(get_task))
        .route("/api/annotation", post(post_annotation))
        .route("/api/progress", get(get_progress))
        .route("/api/export/{kind}", get(get_export))
        .route("/api/admin/load", post(post_load))
        .route("/api/admin/assign", post(post_assign))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Opens the service from `cfg.data_dir` and serves until Ctrl-C.
pub async fn serve(cfg: &ServiceConfig) -> Result<(), ServiceError> {
    cfg.validate()?;
    let admin = cfg.admin_token.clone().unwrap_or_default();
    let data_dir = cfg.data_dir.clone();
    let service = blocking(move || Service::open(&data_dir, &admin)).await?;
    let recovery = service.recovery();
    log::info!(
        "replayed {} log entries ({} torn byte(s) dropped)",
        recovery.entries,
        recovery.truncated_bytes
    );
    let app = router(Arc::new(service), cfg.static_dir.as_deref());
    let addr = format!("{}:{}", cfg.bind, cfg.port);
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|e| ServiceError::Config(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Config(format!("server error: {e}")))
}
