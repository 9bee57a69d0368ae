use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, Completion, GenerationRequest, LlmError};

/// Hex sha256 of the flat prompt text.
pub fn prompt_hash(flat_text: &str) -> String {
    hex::encode(Sha256::digest(flat_text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub prompt_hash: String,
    pub prompt_text: String,
    pub response_text: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Recorded prompt/response pairs. Stored on disk as a JSON list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LlmError::Parse(e.to_string()))
    }

    /// Write entries sorted by hash so the file does not depend on call order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let mut sorted = self.clone();
        sorted.entries.sort_by(|a, b| a.prompt_hash.cmp(&b.prompt_hash));
        let text = serde_json::to_string_pretty(&sorted).map_err(|e| LlmError::Parse(e.to_string()))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn lookup(&self, hash: &str) -> Option<&CassetteEntry> {
        self.entries.iter().find(|e| e.prompt_hash == hash)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Add an entry unless one with the same hash is already present.
    pub fn insert(&mut self, entry: CassetteEntry) -> bool {
        if self.lookup(&entry.prompt_hash).is_some() {
            return false;
        }
        self.entries.push(entry);
        true
    }
}

/// Forwards to an inner backend and keeps every exchange.
pub struct RecordingBackend<B> {
    inner: B,
    cassette: Mutex<Cassette>,
}

impl<B: Backend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        RecordingBackend { inner, cassette: Mutex::new(Cassette::default()) }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().unwrap().clone()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        self.cassette().save(path)
    }
}

#[async_trait]
impl<B: Backend> Backend for RecordingBackend<B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let completion = self.inner.complete(request).await?;
        let entry = CassetteEntry {
            prompt_hash: prompt_hash(&request.prompt.flat_text),
            prompt_text: request.prompt.flat_text.clone(),
            response_text: completion.text.clone(),
            meta: serde_json::json!({
                "backend": self.inner.name(),
                "model": request.model_name,
                "prompt_kind": request.prompt.kind,
            }),
        };
        self.cassette.lock().unwrap().insert(entry);
        Ok(completion)
    }
}

/// Run each request through `backend` and collect the exchanges.
pub async fn record_cassette(backend: &dyn Backend, requests: &[GenerationRequest]) -> Result<Cassette, LlmError> {
    let recorder = RecordingBackend::new(BorrowedBackend(backend));
    for request in requests {
        recorder.complete(request).await?;
    }
    Ok(recorder.cassette())
}

struct BorrowedBackend<'a>(&'a dyn Backend);

#[async_trait]
impl Backend for BorrowedBackend<'_> {
    fn name(&self) -> &str {
        self.0.name()
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        self.0.complete(request).await
    }
}

/// Answers from a cassette by prompt hash. Entries are not consumed, so a
/// repeated prompt gets the same response every time.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(cassette: &Cassette) -> Self {
        let mut responses = HashMap::new();
        for entry in &cassette.entries {
            responses.entry(entry.prompt_hash.clone()).or_insert_with(|| entry.response_text.clone());
        }
        ReplayBackend { responses }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

pub fn open_replay(path: impl AsRef<Path>) -> Result<ReplayBackend, LlmError> {
    Ok(ReplayBackend::new(&Cassette::load(path)?))
}

#[async_trait]
impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    async fn complete(&self, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let hash = prompt_hash(&request.prompt.flat_text);
        match self.responses.get(&hash) {
            Some(text) => Ok(Completion { text: text.clone(), from_cache: true }),
            None => Err(LlmError::CassetteMiss { hash }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{generate, ScriptedBackend};
    use crate::prompt::{PromptComposition, PromptLibrary};

    fn request(query: &str) -> GenerationRequest {
        GenerationRequest::new(PromptLibrary::default().build_general_prompt(query, &PromptComposition::full()))
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(prompt_hash("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[tokio::test]
    async fn record_then_replay_round_trip() {
        let reqs = vec![request("one"), request("two"), request("one")];
        let live = ScriptedBackend::new(["first", "second", "third"]);
        let cassette = record_cassette(&live, &reqs).await.unwrap();
        assert_eq!(cassette.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        cassette.save(&path).unwrap();
        let replay = open_replay(&path).unwrap();
        for _ in 0..3 {
            let r = generate(&replay, &reqs[0]).await.unwrap();
            assert_eq!(r.text, "first");
            assert!(r.from_cache);
        }
        assert_eq!(generate(&replay, &reqs[1]).await.unwrap().text, "second");
    }

    #[tokio::test]
    async fn replay_miss_reports_hash() {
        let replay = ReplayBackend::default();
        let req = request("unseen");
        let expected = prompt_hash(&req.prompt.flat_text);
        match generate(&replay, &req).await {
            Err(LlmError::CassetteMiss { hash }) => assert_eq!(hash, expected),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn saved_file_is_order_independent() {
        let e = |h: &str| CassetteEntry {
            prompt_hash: h.into(),
            prompt_text: h.into(),
            response_text: "r".into(),
            meta: serde_json::Value::Null,
        };
        let dir = tempfile::tempdir().unwrap();
        let a = Cassette { entries: vec![e("b"), e("a")] };
        let b = Cassette { entries: vec![e("a"), e("b")] };
        a.save(dir.path().join("a")).unwrap();
        b.save(dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(dir.path().join("a")).unwrap(), std::fs::read(dir.path().join("b")).unwrap());
    }
}
