use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use super::SimNode;
use crate::source::{ReadRequest, SourceError, WriteRequest};

/// The node's wire face: topology, manifest, read/write, and pause controls.
pub fn router(node: Arc<SimNode>) -> Router {
    Router::new()
        .route("/topology", get(topology))
        .route("/manifest", get(manifest))
        .route("/read", post(read))
        .route("/write", post(write))
        .route("/admin/pause", post(pause))
        .route("/admin/resume", post(resume))
        .with_state(node)
}

fn failure(e: SourceError) -> Response {
    let status = match e {
        SourceError::Unreachable(_) => StatusCode::SERVICE_UNAVAILABLE,
        SourceError::Protocol(_) => StatusCode::INTERNAL_SERVER_ERROR,
    };
    (status, e.to_string()).into_response()
}

async fn topology(State(node): State<Arc<SimNode>>) -> Response {
    match node.topology_document() {
        Ok(doc) => (
            [(header::CONTENT_TYPE, "application/rdf+xml")],
            doc.to_canonical_xml(),
        )
            .into_response(),
        Err(e) => failure(e),
    }
}

async fn manifest(State(node): State<Arc<SimNode>>) -> Response {
    match node.manifest_entries() {
        Ok(m) => Json(m).into_response(),
        Err(e) => failure(e),
    }
}

async fn read(State(node): State<Arc<SimNode>>, Json(req): Json<ReadRequest>) -> Response {
    match node.read_tags(&req.tags) {
        Ok(r) => Json(r).into_response(),
        Err(e) => failure(e),
    }
}

async fn write(State(node): State<Arc<SimNode>>, Json(req): Json<WriteRequest>) -> Response {
    match node.write_tag(&req.tag, &req.value) {
        Ok(ack) if ack.accepted => Json(ack).into_response(),
        Ok(ack) => (StatusCode::CONFLICT, Json(ack)).into_response(),
        Err(e) => failure(e),
    }
}

async fn pause(State(node): State<Arc<SimNode>>) -> StatusCode {
    node.pause();
    StatusCode::NO_CONTENT
}

async fn resume(State(node): State<Arc<SimNode>>) -> StatusCode {
    node.resume();
    StatusCode::NO_CONTENT
}
