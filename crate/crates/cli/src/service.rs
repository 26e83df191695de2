//! Retrieval HTTP service.
//!
//! `POST /retrieve` `{"question", "table_id", "k"}` returns
//! `{"triples": [{"key", "text", "score", "stage"}], "latency_ms": {"first_stage", "rerank"}}`.
//! Unknown tables answer 404 with `{"error": {"kind", "message"}}`.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kbtqa_core::app::TraceTriple;
use kbtqa_core::corpus::Corpus;
use kbtqa_core::retrieve::TripleRetriever;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieveRequest {
    pub question: String,
    pub table_id: String,
    pub k: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub first_stage: f64,
    pub rerank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub triples: Vec<TraceTriple>,
    pub latency_ms: Latency,
}

/// Read-only state shared by all requests.
pub struct ServiceState {
    pub corpus: Corpus,
    pub retriever: Box<dyn TripleRetriever>,
    pub default_k: usize,
}

impl ServiceState {
    pub fn retrieve(&self, req: &RetrieveRequest) -> Result<RetrieveResponse, CliError> {
        let k = req.k.unwrap_or(self.default_k);
        if k == 0 {
            return Err(CliError::new("bad_request", "k must be >= 1"));
        }
        let (t, g) = self
            .corpus
            .table(&req.table_id)
            .zip(self.corpus.graph(&req.table_id))
            .ok_or_else(|| CliError::new("unknown_table", format!("unknown table {}", req.table_id)))?;
        if g.is_empty() {
            return Ok(RetrieveResponse {
                triples: Vec::new(),
                latency_ms: Latency::default(),
            });
        }
        let r = self.retriever.retrieve(&req.question, t, g, k)?;
        let triples = r
            .triples
            .iter()
            .map(|s| TraceTriple::from_scored(s, g))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RetrieveResponse {
            triples,
            latency_ms: Latency {
                first_stage: r.report.first_stage.as_secs_f64() * 1e3,
                rerank: r.report.rerank.as_secs_f64() * 1e3,
            },
        })
    }
}

impl IntoResponse for CliError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            "unknown_table" => StatusCode::NOT_FOUND,
            "bad_request" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, [("content-type", "application/json")], self.to_json()).into_response()
    }
}

async fn retrieve(State(state): State<Arc<ServiceState>>, Json(req): Json<RetrieveRequest>) -> Response {
    // providers may block on HTTP, so keep them off the async workers
    match tokio::task::spawn_blocking(move || state.retrieve(&req)).await {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => CliError::new("internal", e.to_string()).into_response(),
    }
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/retrieve", post(retrieve))
        .route("/health", get(health))
        .with_state(state)
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
