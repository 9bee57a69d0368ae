//! HTTP and WebSocket front end for the query pipeline.
//!
//! Endpoints:
//!
//! - `POST /api/query` answers one query and returns an [`AnswerEvent`].
//! - `GET /api/categories` lists category names.
//! - `GET /api/schema/{category}` returns one category schema.
//! - `GET /health` returns 200.
//! - `GET /ws/chat` upgrades to a WebSocket. Each `{"type":"query"}` frame
//!   produces `stage` frames in pipeline order, then one `answer` frame.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bimassist_core::llm::Backend;
use bimassist_core::pipeline::{run_query_observed, Answer, PipelineConfig, PipelineStage, StageName};
use bimassist_core::Store;
use futures::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryEnvelope {
    pub text: String,
    #[serde(default)]
    pub include_trace: bool,
    #[serde(default)]
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub request_id: String,
    pub stage: StageName,
    pub summary: String,
    pub duration_ms: f64,
    pub ok: bool,
    /// Full stage record, sent when the query asked for a trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<PipelineStage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerEvent {
    pub request_id: String,
    pub text: String,
    pub retrieved_ids: Vec<String>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_stage: Option<StageName>,
}

impl AnswerEvent {
    pub fn from_answer(request_id: &str, answer: &Answer) -> Self {
        AnswerEvent {
            request_id: request_id.to_string(),
            text: answer.text.clone(),
            retrieved_ids: answer.retrieved_ids.clone(),
            ok: answer.ok,
            failure_stage: answer.failure_stage,
        }
    }

    fn rejected(request_id: &str, reason: &str) -> Self {
        AnswerEvent {
            request_id: request_id.to_string(),
            text: reason.to_string(),
            retrieved_ids: Vec::new(),
            ok: false,
            failure_stage: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerFrame {
    Stage(Box<StageEvent>),
    Answer(AnswerEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ClientFrame {
    Query(QueryEnvelope),
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub backend: Arc<dyn Backend>,
    pub pipeline: Arc<PipelineConfig>,
    /// Keep prompt texts in stage details; they are dropped by default.
    pub include_prompts: bool,
}

impl AppState {
    pub fn new(store: Store, backend: Arc<dyn Backend>, pipeline: PipelineConfig) -> Self {
        AppState { store: Arc::new(store), backend, pipeline: Arc::new(pipeline), include_prompts: false }
    }

    fn stage_event(&self, request_id: &str, stage: &PipelineStage, include_trace: bool) -> StageEvent {
        let detail = include_trace.then(|| {
            let mut s = stage.clone();
            if !self.include_prompts {
                s.prompt = None;
            }
            s
        });
        StageEvent {
            request_id: request_id.to_string(),
            stage: stage.name,
            summary: stage.summary_line(),
            duration_ms: stage.duration.as_secs_f64() * 1000.0,
            ok: stage.ok(),
            detail,
        }
    }

    /// Run one query, passing each stage event to `on_stage`.
    pub async fn answer(&self, envelope: &QueryEnvelope, mut on_stage: impl FnMut(StageEvent) + Send) -> AnswerEvent {
        let text = envelope.text.trim();
        if text.is_empty() {
            return AnswerEvent::rejected(&envelope.request_id, "query text is empty");
        }
        let answer = run_query_observed(&self.store, &*self.backend, &self.pipeline, text, &mut |stage| {
            on_stage(self.stage_event(&envelope.request_id, stage, envelope.include_trace))
        })
        .await;
        log::info!(
            "query {:?}: ok={} stages={} backend={:?} total={:?}",
            envelope.request_id,
            answer.ok,
            answer.trace.len(),
            answer.backend_time(),
            answer.total_time()
        );
        AnswerEvent::from_answer(&envelope.request_id, &answer)
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/health", get(health))
        .route("/api/categories", get(categories))
        .route("/api/schema/{category}", get(schema))
        .route("/api/query", post(query))
        .route("/ws/chat", get(ws_chat))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    }
}

pub async fn bind(addr: &str) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr: addr.to_string(), source })
}

/// Serve until the process stops.
pub async fn serve(listener: TcpListener, state: AppState, static_dir: Option<PathBuf>) -> Result<(), ServiceError> {
    if let Ok(addr) = listener.local_addr() {
        log::info!("listening on {addr}");
    }
    axum::serve(listener, router(state, static_dir)).await?;
    Ok(())
}

/// Bind an ephemeral local port and serve in the background.
pub async fn spawn_local(state: AppState) -> Result<SocketAddr, ServiceError> {
    let listener = bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state, None).await {
            log::error!("{e}");
        }
    });
    Ok(addr)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn categories(State(state): State<AppState>) -> Json<Vec<String>> {
    Json(state.store.list_categories())
}

async fn schema(State(state): State<AppState>, Path(category): Path<String>) -> Response {
    match state.store.resolve_category(&category).and_then(|c| state.store.schema(c).ok()) {
        Some(schema) => Json(schema.clone()).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown category '{category}'")),
    }
}

async fn query(State(state): State<AppState>, Json(envelope): Json<QueryEnvelope>) -> Response {
    if envelope.text.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "query text is empty");
    }
    Json(state.answer(&envelope, |_| {}).await).into_response()
}

async fn ws_chat(State(state): State<AppState>, upgrade: WebSocketUpgrade) -> Response {
    upgrade.on_upgrade(move |socket| chat_session(socket, state))
}

async fn chat_session(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<ServerFrame>();
    let writer = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            let text = serde_json::to_string(&frame).expect("frames serialize");
            if sink.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
    });
    while let Some(Ok(msg)) = stream.next().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            _ => continue,
        };
        let envelope = match serde_json::from_str::<ClientFrame>(&text) {
            Ok(ClientFrame::Query(e)) => e,
            Err(e) => {
                let _ = tx.send(ServerFrame::Answer(AnswerEvent::rejected("", &format!("bad frame: {e}"))));
                continue;
            }
        };
        let (state, tx) = (state.clone(), tx.clone());
        tokio::spawn(async move {
            let stage_tx = tx.clone();
            let answer = state
                .answer(&envelope, move |event| {
                    let _ = stage_tx.send(ServerFrame::Stage(Box::new(event)));
                })
                .await;
            let _ = tx.send(ServerFrame::Answer(answer));
        });
    }
    drop(tx);
    let _ = writer.await;
}
