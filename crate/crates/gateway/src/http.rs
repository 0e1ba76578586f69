//! The gateway's wire API.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::watch;

use crate::gateway::{Gateway, GatewayError};
use crate::source::SourceError;

pub const GENERATION_HEADER: HeaderName = HeaderName::from_static("x-gateway-generation");

#[derive(Clone)]
struct Api {
    gw: Arc<Gateway>,
    push: bool,
    closing: watch::Receiver<bool>,
}

/// `closing` ends open event streams so a graceful shutdown can finish.
pub fn router(gw: Arc<Gateway>, push: bool, closing: watch::Receiver<bool>) -> Router {
    let api = Api { gw, push, closing };
    Router::new()
        .route("/api/generation", get(generation))
        .route("/api/topology", get(topology))
        .route("/api/ui-config", get(ui_config))
        .route("/api/devices/{mrid}", get(datasheet))
        .route("/api/devices/{mrid}/data", get(device_data))
        .route("/api/devices/{mrid}/setpoint", post(setpoint))
        .route("/api/ingest", post(ingest))
        .route("/api/events", get(events))
        .layer(middleware::from_fn_with_state(
            api.clone(),
            stamp_generation,
        ))
        .with_state(api)
}

/// Handlers that know which generation they answered from set the header
/// themselves; everything else gets the current one.
async fn stamp_generation(State(api): State<Api>, req: Request, next: Next) -> Response {
    let mut resp = next.run(req).await;
    if !resp.headers().contains_key(&GENERATION_HEADER) {
        resp.headers_mut()
            .insert(GENERATION_HEADER, HeaderValue::from(api.gw.generation()));
    }
    resp
}

fn at(generation: u64, body: impl Serialize) -> Response {
    (
        [(GENERATION_HEADER, HeaderValue::from(generation))],
        Json(body),
    )
        .into_response()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

fn error(status: StatusCode, code: &str, message: impl ToString) -> Response {
    (
        status,
        Json(ErrorBody {
            error: code.to_string(),
            message: message.to_string(),
        }),
    )
        .into_response()
}

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            GatewayError::NotReady => (StatusCode::SERVICE_UNAVAILABLE, "not_ready"),
            GatewayError::UnknownMrid(_) => (StatusCode::NOT_FOUND, "unknown_mrid"),
            GatewayError::Unauthorized => (StatusCode::UNAUTHORIZED, "unauthorized"),
            GatewayError::NotWritable { .. } => (StatusCode::FORBIDDEN, "not_writable"),
            GatewayError::TypeMismatch { .. } => {
                (StatusCode::UNPROCESSABLE_ENTITY, "type_mismatch")
            }
            GatewayError::SourceRejected(_) => (StatusCode::CONFLICT, "source_rejected"),
            GatewayError::Source(SourceError::Unreachable(_)) => {
                (StatusCode::BAD_GATEWAY, "source_unreachable")
            }
            GatewayError::Source(SourceError::Protocol(_)) => {
                (StatusCode::BAD_GATEWAY, "source_protocol")
            }
            GatewayError::Store(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        let mut resp = error(status, code, &self);
        if status == StatusCode::UNAUTHORIZED {
            resp.headers_mut()
                .insert(header::WWW_AUTHENTICATE, HeaderValue::from_static("Bearer"));
        }
        resp
    }
}

async fn generation(State(api): State<Api>) -> Response {
    let s = api.gw.snapshot();
    at(
        s.generation,
        json!({
            "generation": s.generation,
            "library_version": s.library.version(),
            "digest": s.topology.source_digest(),
        }),
    )
}

async fn topology(State(api): State<Api>) -> Result<Response, GatewayError> {
    let t = api.gw.topology()?;
    Ok(at(t.generation, t))
}

async fn ui_config(State(api): State<Api>) -> Result<Response, GatewayError> {
    let c = api.gw.ui_config()?;
    Ok(at(c.generation, c))
}

async fn datasheet(
    State(api): State<Api>,
    Path(mrid): Path<String>,
) -> Result<Response, GatewayError> {
    let d = api.gw.datasheet(&mrid)?;
    Ok(at(d.generation, d))
}

async fn device_data(
    State(api): State<Api>,
    Path(mrid): Path<String>,
) -> Result<Response, GatewayError> {
    let d = api.gw.device_data(&mrid)?;
    Ok(at(d.generation, d))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SetpointRequest {
    pub attribute: String,
    pub value: String,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

async fn setpoint(
    State(api): State<Api>,
    Path(mrid): Path<String>,
    headers: HeaderMap,
    Json(req): Json<SetpointRequest>,
) -> Result<Response, GatewayError> {
    let ack = api
        .gw
        .setpoint(&mrid, &req.attribute, &req.value, bearer(&headers))
        .await?;
    Ok(Json(ack).into_response())
}

async fn ingest(State(api): State<Api>, body: Bytes) -> Response {
    if !api.push {
        return error(
            StatusCode::FORBIDDEN,
            "push_disabled",
            "push ingest is disabled",
        );
    }
    match api.gw.ingest(&body).await {
        Ok(r) => at(r.generation(), r),
        Err(e) => (StatusCode::UNPROCESSABLE_ENTITY, Json(e)).into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct Since {
    since: Option<u64>,
}

async fn events(
    State(api): State<Api>,
    Query(q): Query<Since>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let sub = api.gw.subscribe(q.since.unwrap_or(0));
    let mut closing = api.closing.clone();
    let stream = futures::stream::unfold(sub, |mut sub| async move {
        let ev = sub.next().await?;
        let sse = Event::default()
            .event(ev.name())
            .json_data(&ev)
            .unwrap_or_else(|_| Event::default().event(ev.name()));
        Some((Ok(sse), sub))
    })
    .take_until(async move {
        let _ = closing.wait_for(|c| *c).await;
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
