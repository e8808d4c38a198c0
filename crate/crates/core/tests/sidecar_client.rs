//! The sidecar client against an in-process stub speaking the wire protocol.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use claimsift_core::sidecar::{fetch_embeddings, SidecarClient, SidecarError};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Stub {
    calls: Arc<AtomicUsize>,
    /// Drop the last vector from /embed responses.
    short_embed: bool,
    /// Fail this many requests with 503 before answering.
    fail_first: Arc<AtomicUsize>,
}

fn pseudo_vector(text: &str) -> Vec<f32> {
    let mut h: u64 = 0xcbf29ce484222325;
    (0..8)
        .map(|_| {
            for b in text.bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
            h = h.rotate_left(17);
            (h % 1000) as f32 / 1000.0 + 0.001
        })
        .collect()
}

async fn embed(State(s): State<Stub>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.calls.fetch_add(1, Ordering::SeqCst);
    let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
    if texts.iter().any(String::is_empty) {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "empty text"})));
    }
    let mut vectors: Vec<Vec<f32>> = texts.iter().map(|t| pseudo_vector(t)).collect();
    if s.short_embed {
        vectors.pop();
    }
    (StatusCode::OK, Json(json!({"dim": 8, "model": "stub-hash", "vectors": vectors})))
}

async fn summarize(State(s): State<Stub>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    s.calls.fetch_add(1, Ordering::SeqCst);
    if s
        .fail_first
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "warming up"})));
    }
    let texts: Vec<String> = serde_json::from_value(body["texts"].clone()).unwrap();
    match texts.first() {
        None => (StatusCode::BAD_REQUEST, Json(json!({"error": "no texts"}))),
        Some(t) => (StatusCode::OK, Json(json!({"summary": t}))),
    }
}

async fn score(Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let pairs = body["pairs"].as_array().unwrap();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|p| if p[0] == p[1] { 1.0 } else { 0.25 })
        .collect();
    (StatusCode::OK, Json(json!({ "scores": scores })))
}

fn spawn(stub: Stub) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/embed", post(embed))
                .route("/summarize", post(summarize))
                .route("/score", post(score))
                .with_state(stub);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn client(addr: SocketAddr) -> SidecarClient {
    SidecarClient::new(&format!("http://{addr}/"), Duration::from_secs(5))
        .unwrap()
        .with_retries(3, Duration::from_millis(5))
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

#[test]
fn embeds_one_row_per_text_in_order() {
    let addr = spawn(Stub::default());
    let m = fetch_embeddings(&client(addr), &strings(&["p1", "p2"]), &strings(&["alpha", "beta"])).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m.dim(), 8);
    assert_eq!(m.model_name(), "stub-hash");
    assert_eq!(m.row(1), pseudo_vector("beta").as_slice());
}

#[test]
fn empty_input_skips_the_service() {
    let stub = Stub::default();
    let calls = stub.calls.clone();
    let addr = spawn(stub);
    let m = fetch_embeddings(&client(addr), &[], &[]).unwrap();
    assert!(m.is_empty());
    assert_eq!(calls.load(Ordering::SeqCst), 0);
}

#[test]
fn wrong_vector_count_is_a_protocol_error() {
    let addr = spawn(Stub {
        short_embed: true,
        ..Default::default()
    });
    let err = fetch_embeddings(&client(addr), &strings(&["a", "b"]), &strings(&["x", "y"])).unwrap_err();
    assert!(matches!(err, SidecarError::Protocol(_)), "{err}");
}

#[test]
fn client_errors_are_not_retried() {
    let stub = Stub::default();
    let calls = stub.calls.clone();
    let addr = spawn(stub);
    let err = client(addr).embed(&strings(&[""])).unwrap_err();
    assert!(matches!(err, SidecarError::Protocol(ref m) if m.contains("empty text")), "{err}");
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried() {
    let stub = Stub {
        fail_first: Arc::new(AtomicUsize::new(2)),
        ..Default::default()
    };
    let calls = stub.calls.clone();
    let addr = spawn(stub);
    let s = client(addr).summarize(&strings(&["first line", "second"]), 64).unwrap();
    assert_eq!(s, "first line");
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let stub = Stub {
        fail_first: Arc::new(AtomicUsize::new(10)),
        ..Default::default()
    };
    let addr = spawn(stub);
    let err = client(addr).summarize(&strings(&["x"]), 64).unwrap_err();
    assert!(err.is_retriable());
}

#[test]
fn unreachable_service_is_retriable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = client(addr).with_retries(1, Duration::ZERO).embed(&strings(&["x"])).unwrap_err();
    assert!(err.is_retriable());
}

#[test]
fn scores_one_per_pair() {
    let addr = spawn(Stub::default());
    let c = client(addr);
    assert!(c.score(&[]).unwrap().is_empty());
    let pairs = vec![
        ("a".to_string(), "a".to_string()),
        ("a".to_string(), "b".to_string()),
        ("c".to_string(), "d".to_string()),
    ];
    assert_eq!(c.score(&pairs).unwrap(), vec![1.0, 0.25, 0.25]);
}
