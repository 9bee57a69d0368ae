use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use bimassist_core::llm::{generate, Backend, GenerationRequest, LlmError, RemoteBackend, RemoteConfig};
use bimassist_core::prompt::{PromptComposition, PromptLibrary};
use serde_json::{json, Value};

#[derive(Clone)]
struct Stub {
    calls: Arc<AtomicUsize>,
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<String>>>,
    /// Status codes for the first calls; afterwards the stub succeeds.
    failures: Arc<Vec<u16>>,
    delay: Duration,
}

impl Stub {
    fn new(failures: Vec<u16>) -> Self {
        Stub {
            calls: Arc::default(),
            bodies: Arc::default(),
            auth: Arc::default(),
            failures: Arc::new(failures),
            delay: Duration::ZERO,
        }
    }
}

async fn handler(State(stub): State<Stub>, headers: HeaderMap, Json(body): Json<Value>) -> Response {
    let n = stub.calls.fetch_add(1, Ordering::SeqCst);
    stub.bodies.lock().unwrap().push(body);
    if let Some(h) = headers.get("authorization") {
        stub.auth.lock().unwrap().push(h.to_str().unwrap().to_string());
    }
    tokio::time::sleep(stub.delay).await;
    if let Some(&code) = stub.failures.get(n) {
        let status = StatusCode::from_u16(code).unwrap();
        return (status, [("retry-after", "0")], "nope").into_response();
    }
    Json(json!({"choices": [{"message": {"role": "assistant", "content": "A: [ask in GPT] for 'NA'"}}]}))
        .into_response()
}

async fn serve(stub: Stub) -> String {
    let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(stub);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1/chat/completions")
}

fn config(endpoint: String) -> RemoteConfig {
    RemoteConfig {
        endpoint,
        api_key: Some("secret".into()),
        timeout: Duration::from_secs(5),
        backoff: Duration::from_millis(5),
        ..RemoteConfig::default()
    }
}

fn request() -> GenerationRequest {
    let lib = PromptLibrary::default();
    GenerationRequest::new(lib.build_general_prompt("What is an AHU?", &PromptComposition::full()))
}

#[tokio::test]
async fn sends_system_and_user_messages() {
    let stub = Stub::new(vec![]);
    let backend = RemoteBackend::new(config(serve(stub.clone()).await)).unwrap();
    let req = request();
    let out = generate(&backend, &req).await.unwrap();
    assert_eq!(out.text, "A: [ask in GPT] for 'NA'");
    assert_eq!(out.backend, "remote");

    let body = stub.bodies.lock().unwrap()[0].clone();
    assert_eq!(body["model"], "gpt-3.5-turbo");
    assert_eq!(body["temperature"], 0.0);
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[0]["content"], req.prompt.system_text().unwrap());
    assert_eq!(messages[1]["role"], "user");
    assert_eq!(messages[1]["content"], req.prompt.non_system_text());
    assert_eq!(stub.auth.lock().unwrap()[0], "Bearer secret");
}

#[tokio::test]
async fn retries_server_errors() {
    let stub = Stub::new(vec![500, 503, 429]);
    let backend = RemoteBackend::new(config(serve(stub.clone()).await)).unwrap();
    assert!(backend.complete(&request()).await.is_ok());
    assert_eq!(stub.calls.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn gives_up_after_retries() {
    let stub = Stub::new(vec![429; 10]);
    let backend = RemoteBackend::new(config(serve(stub.clone()).await)).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert_eq!(err, LlmError::RateLimited { retry_after: Some(Duration::ZERO) });
    assert_eq!(stub.calls.load(Ordering::SeqCst), 4);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let stub = Stub::new(vec![401]);
    let backend = RemoteBackend::new(config(serve(stub.clone()).await)).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, LlmError::Rejected { status: 401, .. }));
    assert_eq!(stub.calls.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_endpoint_is_unavailable() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let backend = RemoteBackend::new(config(format!("http://{addr}/v1/chat/completions"))).unwrap();
    let err = backend.complete(&request()).await.unwrap_err();
    assert!(matches!(err, LlmError::BackendUnavailable(_)), "{err:?}");
}

#[tokio::test]
async fn slow_endpoint_times_out() {
    let mut stub = Stub::new(vec![]);
    stub.delay = Duration::from_millis(500);
    let mut cfg = config(serve(stub.clone()).await);
    cfg.timeout = Duration::from_millis(50);
    cfg.max_retries = 1;
    let backend = RemoteBackend::new(cfg).unwrap();
    assert_eq!(backend.complete(&request()).await.unwrap_err(), LlmError::Timeout);
    assert_eq!(stub.calls.load(Ordering::SeqCst), 2);
}
