//! Stateless HTTP front end to the reward engine.
//!
//! `POST /v1/grade` takes one trajectory document and answers with the same
//! breakdown bytes the offline `grade` command writes; `GET /healthz`
//! reports readiness.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde_json::json;

use crate::grading::{GradeError, Grader};

fn json_response(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn grade(State(grader): State<Arc<Grader>>, body: String) -> Response {
    match grader.grade_json(&body) {
        Ok(text) => json_response(StatusCode::OK, text),
        Err(e @ GradeError::Malformed(_)) => {
            json_response(StatusCode::BAD_REQUEST, json!({"error": e.to_string()}).to_string())
        }
        Err(e @ GradeError::UnknownCase(_)) => {
            json_response(StatusCode::NOT_FOUND, json!({"error": e.to_string()}).to_string())
        }
    }
}

async fn healthz(State(grader): State<Arc<Grader>>) -> Response {
    let body = json!({"status": "ok", "cases": grader.len(), "scheme": grader.scheme.to_string()});
    json_response(StatusCode::OK, body.to_string())
}

pub fn router(grader: Arc<Grader>) -> Router {
    Router::new().route("/v1/grade", post(grade)).route("/healthz", get(healthz)).with_state(grader)
}

pub async fn serve(listener: tokio::net::TcpListener, grader: Arc<Grader>) -> std::io::Result<()> {
    axum::serve(listener, router(grader)).await
}

/// Binds `addr` and serves from a background thread with its own runtime.
/// Returns the bound address (useful with port 0).
pub fn spawn(grader: Grader, addr: &str) -> std::io::Result<SocketAddr> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    std::thread::spawn(move || {
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with runtime");
            if let Err(e) = serve(listener, Arc::new(grader)).await {
                tracing::error!(%e, "grading service stopped");
            }
        })
    });
    Ok(local)
}
