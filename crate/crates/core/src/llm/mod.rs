//! Text-generation backends.
//!
//! Three interchangeable implementations sit behind [`Backend`]: a remote
//! chat-completions client, a scripted mock, and a cassette replayer. A
//! [`RecordingBackend`] wraps any backend to capture a cassette.

mod cassette;
mod remote;

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::prompt::RenderedPrompt;

pub use cassette::{
    open_replay, prompt_hash, record_cassette, Cassette, CassetteEntry, RecordingBackend, ReplayBackend,
};
pub use remote::{RemoteBackend, RemoteConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend timed out")]
    Timeout,
    #[error("backend rate limited the request")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("scripted backend has no replies left")]
    ScriptExhausted,
    #[error("no cassette entry for prompt {hash}")]
    CassetteMiss { hash: String },
    #[error("malformed backend data: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LlmError {
    fn from(e: std::io::Error) -> Self {
        LlmError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: RenderedPrompt,
    pub temperature: f64,
    pub max_output_chars: usize,
    pub model_name: String,
}

impl GenerationRequest {
    pub fn new(prompt: RenderedPrompt) -> Self {
        GenerationRequest { prompt, temperature: 0.0, max_output_chars: 2048, model_name: String::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency: Duration,
    pub backend: String,
    pub from_cache: bool,
}

#[async_trait]
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError>;
}

#[async_trait]
impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        (**self).complete(request).await
    }
}

/// Run one generation and time it.
pub async fn generate(backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResult, LlmError> {
    let start = Instant::now();
    let completion = backend.complete(request).await?;
    Ok(GenerationResult {
        text: completion.text,
        latency: start.elapsed(),
        backend: backend.name().to_string(),
        from_cache: completion.from_cache,
    })
}

/// Replies with a fixed list of outputs, in order, regardless of the prompt.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    replies: Mutex<VecDeque<String>>,
    seen: Mutex<Vec<RenderedPrompt>>,
}

impl ScriptedBackend {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            replies: Mutex::new(replies.into_iter().map(Into::into).collect()),
            seen: Mutex::new(Vec::new()),
        }
    }

    /// Load a JSON array of reply strings.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)?;
        let replies: Vec<String> = serde_json::from_str(&text).map_err(|e| LlmError::Parse(e.to_string()))?;
        Ok(ScriptedBackend::new(replies))
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }

    /// Prompts received so far.
    pub fn prompts(&self) -> Vec<RenderedPrompt> {
        self.seen.lock().unwrap().clone()
    }
}

#[async_trait]
impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "script"
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        self.seen.lock().unwrap().push(request.prompt.clone());
        let text = self.replies.lock().unwrap().pop_front().ok_or(LlmError::ScriptExhausted)?;
        Ok(Completion { text, from_cache: false })
    }
}

/// Computes each reply from the request with a closure.
pub struct FnBackend<F> {
    name: String,
    respond: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(name: impl Into<String>, respond: F) -> Self {
        FnBackend { name: name.into(), respond }
    }
}

#[async_trait]
impl<F> Backend for FnBackend<F>
where
    F: Fn(&GenerationRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        (self.respond)(request).map(|text| Completion { text, from_cache: false })
    }
}

/// Caps the number of in-flight generations on a backend.
pub struct ConcurrencyLimit<B> {
    inner: B,
    permits: Semaphore,
}

impl<B: Backend> ConcurrencyLimit<B> {
    pub const DEFAULT_LIMIT: usize = 4;

    pub fn new(inner: B, limit: usize) -> Self {
        ConcurrencyLimit { inner, permits: Semaphore::new(limit.max(1)) }
    }
}

#[async_trait]
impl<B: Backend> Backend for ConcurrencyLimit<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let _permit = self.permits.acquire().await.map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        self.inner.complete(request).await
    }
}

/// Which backend to construct from configuration.
#[derive(Debug, Clone)]
pub enum BackendSpec {
    Remote(RemoteConfig),
    Script(PathBuf),
    Replay(PathBuf),
}

pub fn build_backend(spec: &BackendSpec) -> Result<Arc<dyn Backend>, LlmError> {
    Ok(match spec {
        BackendSpec::Remote(config) => {
            let limit = config.max_in_flight;
            Arc::new(ConcurrencyLimit::new(RemoteBackend::new(config.clone())?, limit))
        }
        BackendSpec::Script(path) => Arc::new(ScriptedBackend::load(path)?),
        BackendSpec::Replay(path) => Arc::new(open_replay(path)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{PromptComposition, PromptLibrary};

    fn request(query: &str) -> GenerationRequest {
        let p = PromptLibrary::default().build_general_prompt(query, &PromptComposition::full());
        GenerationRequest::new(p)
    }

    #[tokio::test]
    async fn scripted_replies_in_order() {
        let b = ScriptedBackend::new(["A: [search in BIM] for 'Pumps'"]);
        let r = generate(&b, &request("q")).await.unwrap();
        assert_eq!(r.text, "A: [search in BIM] for 'Pumps'");
        assert!(!r.from_cache);
        assert_eq!(r.backend, "script");
        assert_eq!(generate(&b, &request("q")).await, Err(LlmError::ScriptExhausted));
        assert_eq!(b.prompts().len(), 2);
    }

    #[tokio::test]
    async fn fn_backend_sees_request() {
        let b = FnBackend::new("echo", |r: &GenerationRequest| Ok(format!("{}", r.prompt.char_count)));
        let req = request("What is BIM?");
        let out = generate(&b, &req).await.unwrap();
        assert_eq!(out.text, req.prompt.char_count.to_string());
    }

    #[test]
    fn default_temperature_is_zero() {
        assert_eq!(request("q").temperature, 0.0);
    }

    #[tokio::test]
    async fn concurrency_limit_caps_in_flight() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        #[async_trait]
        impl Backend for Slow {
            fn name(&self) -> &str {
                "slow"
            }
            async fn complete(&self, _: &GenerationRequest) -> Result<Completion, LlmError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                tokio::time::sleep(Duration::from_millis(20)).await;
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(Completion { text: String::new(), from_cache: false })
            }
        }
        let inner = Arc::new(Slow { now: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let limited = Arc::new(ConcurrencyLimit::new(inner.clone(), 2));
        let req = request("q");
        let futs = (0..8).map(|_| {
            let l = limited.clone();
            let r = req.clone();
            async move { l.complete(&r).await }
        });
        futures::future::join_all(futs).await;
        assert_eq!(inner.peak.load(Ordering::SeqCst), 2);
    }
}
