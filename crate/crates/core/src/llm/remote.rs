use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{Backend, Completion, GenerationRequest, LlmError};

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub max_retries: u32,
    /// First backoff delay; doubles on each retry.
    pub backoff: Duration,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".to_string(),
            api_key: None,
            model: "gpt-3.5-turbo".to_string(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff: Duration::from_secs(1),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Chat-completions client. The system section becomes the system message;
/// every other section, in order, forms a single user message.
pub struct RemoteBackend {
    client: reqwest::Client,
    config: RemoteConfig,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, LlmError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(RemoteBackend { client, config })
    }

    pub fn messages(request: &GenerationRequest) -> Vec<ChatMessage> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = request.prompt.system_text() {
            messages.push(ChatMessage { role: "system".into(), content: system.to_string() });
        }
        messages.push(ChatMessage { role: "user".into(), content: request.prompt.non_system_text() });
        messages
    }

    async fn attempt(&self, body: &ChatRequest<'_>) -> Result<String, LlmError> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(classify)?;
        let status = resp.status();
        if status.as_u16() == 429 {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(Duration::from_secs_f64);
            return Err(LlmError::RateLimited { retry_after });
        }
        if status.is_server_error() {
            return Err(LlmError::BackendUnavailable(format!("server returned {status}")));
        }
        if !status.is_success() {
            let message = resp.text().await.unwrap_or_default();
            return Err(LlmError::Rejected { status: status.as_u16(), message });
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| LlmError::Parse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Parse("response has no choices".into()))
    }
}

fn classify(e: reqwest::Error) -> LlmError {
    if e.is_timeout() {
        LlmError::Timeout
    } else {
        LlmError::BackendUnavailable(e.to_string())
    }
}

fn retryable(e: &LlmError) -> bool {
    matches!(e, LlmError::BackendUnavailable(_) | LlmError::Timeout | LlmError::RateLimited { .. })
}

#[async_trait]
impl Backend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let model = if request.model_name.is_empty() { &self.config.model } else { &request.model_name };
        let body = ChatRequest {
            model,
            messages: RemoteBackend::messages(request),
            temperature: request.temperature,
            max_tokens: (request.max_output_chars > 0).then(|| request.max_output_chars.div_ceil(4)),
        };
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&body).await {
                Ok(text) => return Ok(Completion { text, from_cache: false }),
                Err(e) if retryable(&e) && attempt < self.config.max_retries => {
                    let wait = match &e {
                        LlmError::RateLimited { retry_after: Some(after) } => *after,
                        _ => delay,
                    };
                    log::warn!("generation attempt {} failed ({e}); retrying in {wait:?}", attempt + 1);
                    tokio::time::sleep(wait).await;
                    delay *= 2;
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
