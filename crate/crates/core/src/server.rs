//! axum adapter for `Service::dispatch`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{header, Request, Response, StatusCode};
use axum::Router;

use crate::api::{ApiBody, ApiError, ApiRequest, Method, Service};

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub fn router(service: Arc<Service>) -> Router {
    Router::new().fallback(move |req: Request<Body>| {
        let service = service.clone();
        async move { handle(service, req).await }
    })
}

async fn handle(service: Arc<Service>, req: Request<Body>) -> Response<Body> {
    let method = Method::parse(req.method().as_str());
    let path = req.uri().path().to_string();
    let query = req.uri().query().unwrap_or("").to_string();
    let body = match to_bytes(req.into_body(), MAX_BODY_BYTES).await {
        Ok(b) => b.to_vec(),
        Err(e) => {
            let err = ApiError {
                status: 413,
                code: "body_too_large".into(),
                message: e.to_string(),
                retryable: false,
                fields: vec![],
            };
            return to_http(err.into_response());
        }
    };
    let api_req = ApiRequest { method, path, query, body };
    // Provider calls block, so requests run off the async workers.
    let resp = tokio::task::spawn_blocking(move || service.dispatch(&api_req)).await;
    match resp {
        Ok(r) => to_http(r),
        Err(e) => {
            let err = ApiError {
                status: 500,
                code: "internal".into(),
                message: e.to_string(),
                retryable: true,
                fields: vec![],
            };
            to_http(err.into_response())
        }
    }
}

fn to_http(resp: crate::api::ApiResponse) -> Response<Body> {
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let (media_type, bytes) = match resp.body {
        ApiBody::Json(v) => ("application/json".to_string(), serde_json::to_vec(&v).expect("json serializes")),
        ApiBody::Bytes { media_type, bytes } => (media_type, bytes),
    };
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, media_type)
        .body(Body::from(bytes))
        .expect("valid response")
}

/// Bind `addr` and serve until the process ends. Returns the bound address
/// through `on_bound` so callers can use port 0.
pub async fn serve(
    service: Arc<Service>,
    addr: SocketAddr,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tracing::info!(%local, "listening");
    on_bound(local);
    axum::serve(listener, router(service)).await
}
