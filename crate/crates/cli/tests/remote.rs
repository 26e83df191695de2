mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::post;
use axum::{Json, Router};
use common::spawn_server;
use kbtqa::config::HttpConfig;
use kbtqa::remote::{RemoteEmbedder, RemoteGenerator, RemoteScorer};
use kbtqa_core::app::GenerationClient;
use kbtqa_core::retrieve::{EmbedMode, EmbeddingProvider, HashingEmbedder, PairScorer, ScorePair};
use serde_json::{json, Value};

fn http() -> HttpConfig {
    HttpConfig {
        timeout_secs: 5,
        retries: 2,
    }
}

/// `/embed` backed by the hashing embedder, so results have a local oracle.
fn embed_router(dim: usize) -> Router {
    let h = HashingEmbedder::<f64>::new(dim).unwrap();
    Router::new().route(
        "/embed",
        post(move |Json(body): Json<Value>| async move {
            let mode = if body["mode"] == "query" { EmbedMode::Query } else { EmbedMode::Context };
            let vectors: Vec<Vec<f64>> = body["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| h.embed(t.as_str().unwrap(), mode).unwrap())
                .collect();
            Json(json!({ "vectors": vectors }))
        }),
    )
}

#[test]
fn embedder_matches_local_hasher_and_probes_dim() {
    let base = spawn_server(embed_router(32));
    let remote = RemoteEmbedder::new(&base, None, &http()).unwrap();
    assert_eq!(remote.dim(), 32);
    assert!(remote.fingerprint().contains("dim=32"));
    let local = HashingEmbedder::<f64>::new(32).unwrap();
    for text in ["who is the spouse", "", "[HEAD] a [REL] b"] {
        assert_eq!(remote.embed(text, EmbedMode::Query).unwrap(), local.embed(text, EmbedMode::Query).unwrap());
    }
    let texts: Vec<String> = (0..150).map(|i| format!("text number {i}")).collect();
    let got = remote.embed_batch(&texts, EmbedMode::Context).unwrap();
    assert_eq!(got.len(), 150);
    assert_eq!(got[149], local.embed("text number 149", EmbedMode::Context).unwrap());
}

#[test]
fn embedder_rejects_wrong_width() {
    let base = spawn_server(embed_router(16));
    let remote = RemoteEmbedder::new(&base, Some(32), &http()).unwrap();
    let err = remote.embed("x", EmbedMode::Query).unwrap_err();
    assert!(err.to_string().contains("expected 32"), "{err}");
}

#[test]
fn transient_failures_are_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h2 = hits.clone();
    let router = Router::new().route(
        "/score",
        post(move |Json(body): Json<Value>| {
            let n = h2.fetch_add(1, Ordering::SeqCst);
            async move {
                if n < 2 {
                    return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({}))).into_response();
                }
                let k = body["pairs"].as_array().unwrap().len();
                (StatusCode::OK, Json(json!({ "scores": vec![0.5; k] }))).into_response()
            }
        }),
    );
    let base = spawn_server(router);
    let s = RemoteScorer::new(&base, &http()).unwrap();
    assert_eq!(s.score("q", "t", "tr").unwrap(), 0.5);
    assert_eq!(hits.load(Ordering::SeqCst), 3);

    let no_retry = RemoteScorer::new(&base, &HttpConfig { timeout_secs: 5, retries: 0 }).unwrap();
    hits.store(0, Ordering::SeqCst);
    let err = no_retry.score("q", "t", "tr").unwrap_err();
    assert!(err.to_string().contains("503"), "{err}");
}

#[test]
fn scorer_checks_bounds_and_counts() {
    let router = Router::new().route(
        "/score",
        post(|Json(body): Json<Value>| async move {
            let pairs = body["pairs"].as_array().unwrap();
            let scores: Vec<f64> = pairs
                .iter()
                .map(|p| if p["triple"] == "bad" { 1.5 } else { p["question"].as_str().unwrap().len() as f64 / 10.0 })
                .collect();
            Json(json!({ "scores": scores }))
        }),
    );
    let base = spawn_server(router);
    let s = RemoteScorer::new(&base, &http()).unwrap();
    let pairs = vec![
        ScorePair {
            question: "abc".into(),
            table: "t".into(),
            triple: "x".into(),
        },
        ScorePair {
            question: "abcdefg".into(),
            table: "t".into(),
            triple: "y".into(),
        },
    ];
    assert_eq!(s.score_batch(&pairs).unwrap(), vec![0.3, 0.7]);
    assert!(s.score("q", "t", "bad").is_err());
}

#[test]
fn generator_sends_the_contract() {
    let router = Router::new().route(
        "/generate",
        post(|Json(body): Json<Value>| async move {
            Json(json!({
                "text": format!("{}|{}|{}", body["prompt"].as_str().unwrap(), body["max_tokens"], body["temperature"])
            }))
        }),
    );
    let base = spawn_server(router);
    let g = RemoteGenerator::new(&base, &http()).unwrap();
    assert_eq!(g.generate("hello", 12, 0.0).unwrap(), "hello|12|0.0");
}

#[test]
fn unreachable_endpoint_is_an_error() {
    // bind then drop to get a port nobody listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = HttpConfig {
        timeout_secs: 1,
        retries: 0,
    };
    let g = RemoteGenerator::new(&format!("http://127.0.0.1:{port}"), &cfg).unwrap();
    assert!(g.generate("x", 1, 0.0).is_err());
    assert!(RemoteEmbedder::new(&format!("http://127.0.0.1:{port}"), None, &cfg).is_err());
}
