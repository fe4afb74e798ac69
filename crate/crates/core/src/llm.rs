//! Chat-completion client with retries, bounded batch parallelism and a
//! record/replay cassette for offline, deterministic runs.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::prompting::{ChatMessage, RenderedPrompt};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("environment variable {0} holding the API key is not set")]
    MissingCredentials(String),
    #[error("request failed after {attempts} attempt(s) (last status {status:?}): {message}")]
    Transport { attempts: u32, status: Option<u16>, message: String },
    #[error("cassette has no entry for request {digest}")]
    CassetteMiss { digest: String },
    #[error("cassette {path}: {reason}")]
    Cassette { path: PathBuf, reason: String },
    #[error("provider payload has no message content: {0}")]
    MalformedPayload(String),
    #[error("model returned an empty hypothesis")]
    EmptyHypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Request timeout in seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: 60.0,
            max_retries: 3,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

impl ProviderConfig {
    pub fn for_model(model_id: &str) -> Self {
        ProviderConfig { model_id: model_id.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.timeout.is_nan() || self.timeout <= 0.0 {
            return Err(LlmError::Config(format!("timeout must be > 0, got {}", self.timeout)));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.model_id.trim().is_empty() {
            return Err(LlmError::Config("model_id is empty".into()));
        }
        Ok(())
    }

    /// Digest identifying a request in a cassette.
    pub fn request_digest(&self, prompt: &RenderedPrompt) -> String {
        let key = json!({
            "model_id": self.model_id,
            "prompt": String::from_utf8(prompt.to_bytes()).expect("JSON is UTF-8"),
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(key.to_string().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOutput {
    pub sample_id: String,
    pub hypothesis: String,
    pub raw: Value,
    pub model_id: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
}

/// A single request as handed to a transport.
#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportFailure {
    pub status: Option<u16>,
    pub message: String,
}

impl TransportFailure {
    /// Connection errors, 429 and 5xx are retried.
    pub fn retryable(&self) -> bool {
        match self.status {
            None => true,
            Some(s) => s == 429 || (500..600).contains(&s),
        }
    }
}

/// Something that can turn a chat request into a raw provider payload.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ChatRequest<'_>) -> Result<Value, TransportFailure>;
}

/// OpenAI-style chat-completions over HTTPS.
pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
}

impl HttpTransport {
    /// Reads the API key from the environment variable named in `cfg`.
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = std::env::var(&cfg.api_key_env)
            .map_err(|_| LlmError::MissingCredentials(cfg.api_key_env.clone()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpTransport { agent, endpoint: cfg.endpoint.clone(), api_key })
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest<'_>) -> Result<Value, TransportFailure> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request)
            .map_err(|e| TransportFailure { status: None, message: e.to_string() })?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().unwrap_or_default();
        if !(200..300).contains(&status) {
            return Err(TransportFailure { status: Some(status), message: body });
        }
        serde_json::from_str(&body).map_err(|e| TransportFailure {
            status: Some(status),
            message: format!("invalid JSON body: {e}"),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CassetteLine {
    digest: String,
    payload: Value,
}

/// JSON-lines map from request digest to raw payload.
pub struct Cassette {
    path: PathBuf,
    entries: RwLock<HashMap<String, Value>>,
    writer: Mutex<Option<File>>,
}

impl Cassette {
    fn read_entries(path: &Path) -> Result<HashMap<String, Value>, LlmError> {
        let text = fs::read_to_string(path)
            .map_err(|e| LlmError::Cassette { path: path.to_path_buf(), reason: e.to_string() })?;
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let entry: CassetteLine = serde_json::from_str(line).map_err(|e| LlmError::Cassette {
                path: path.to_path_buf(),
                reason: format!("line {}: {e}", i + 1),
            })?;
            entries.entry(entry.digest).or_insert(entry.payload);
        }
        Ok(entries)
    }

    /// Read-only cassette; the file must exist.
    pub fn open_replay(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        Ok(Cassette {
            path: path.to_path_buf(),
            entries: RwLock::new(Self::read_entries(path)?),
            writer: Mutex::new(None),
        })
    }

    /// Appending cassette; created if missing, existing entries kept.
    pub fn open_record(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let entries = if path.exists() { Self::read_entries(path)? } else { HashMap::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Cassette { path: path.to_path_buf(), reason: e.to_string() })?;
        Ok(Cassette {
            path: path.to_path_buf(),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cassette lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, digest: &str) -> Option<Value> {
        self.entries.read().expect("cassette lock").get(digest).cloned()
    }

    /// Appends a new digest; repeated digests are not rewritten.
    pub fn store(&self, digest: &str, payload: &Value) -> Result<(), LlmError> {
        let mut writer = self.writer.lock().expect("cassette writer lock");
        let file = writer.as_mut().ok_or_else(|| LlmError::Cassette {
            path: self.path.clone(),
            reason: "cassette opened for replay only".into(),
        })?;
        let mut entries = self.entries.write().expect("cassette lock");
        if entries.contains_key(digest) {
            return Ok(());
        }
        let line = serde_json::to_string(&CassetteLine { digest: digest.into(), payload: payload.clone() })
            .expect("cassette line serializes");
        writeln!(file, "{line}")
            .and_then(|_| file.flush())
            .map_err(|e| LlmError::Cassette { path: self.path.clone(), reason: e.to_string() })?;
        entries.insert(digest.to_string(), payload.clone());
        Ok(())
    }
}

/// Exponential backoff: `base * factor^retry`, stretched by up to `jitter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub factor: f64,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { base: Duration::from_secs(1), factor: 2.0, jitter: 0.25 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { base: Duration::ZERO, factor: 1.0, jitter: 0.0 }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let scale = self.factor.powi(retry as i32) * (1.0 + self.jitter * rand::rng().random::<f64>());
        self.base.mul_f64(scale)
    }
}

enum Mode {
    Live(Arc<dyn Transport>),
    Record(Arc<dyn Transport>, Cassette),
    Replay(Cassette),
}

pub struct LlmClient {
    config: ProviderConfig,
    mode: Mode,
    retry: RetryPolicy,
}

/// Strip surrounding whitespace, markdown code fences and wrapping quotes,
/// repeating until nothing changes.
pub fn extract_hypothesis(text: &str) -> String {
    let mut current = text.trim();
    loop {
        let next = strip_fence(current).or_else(|| strip_quotes(current)).map(str::trim);
        match next {
            Some(n) if n != current => current = n,
            _ => return current.to_string(),
        }
    }
}

fn strip_fence(text: &str) -> Option<&str> {
    let inner = text.strip_prefix("```")?.strip_suffix("```")?;
    // Drop an info string such as ```text on the opening line.
    match inner.split_once('\n') {
        Some((info, body)) if !info.trim().contains(' ') => Some(body),
        _ => Some(inner),
    }
}

fn strip_quotes(text: &str) -> Option<&str> {
    const PAIRS: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('“', '”'), ('「', '」')];
    for (open, close) in PAIRS {
        if text.chars().count() >= 2 {
            if let Some(inner) = text.strip_prefix(open).and_then(|t| t.strip_suffix(close)) {
                return Some(inner);
            }
        }
    }
    None
}

/// Message content of an OpenAI-style chat-completions payload.
pub fn payload_content(payload: &Value) -> Result<&str, LlmError> {
    payload
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| LlmError::MalformedPayload(truncate(&payload.to_string(), 200)))
}

fn truncate(s: &str, n: usize) -> String {
    s.chars().take(n).collect()
}

/// An OpenAI-style payload carrying `content`, for scripted transports.
pub fn payload_with_content(model_id: &str, content: &str) -> Value {
    json!({
        "object": "chat.completion",
        "model": model_id,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })
}

impl LlmClient {
    pub fn live(config: ProviderConfig, transport: Arc<dyn Transport>) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(LlmClient { config, mode: Mode::Live(transport), retry: RetryPolicy::default() })
    }

    pub fn record(
        config: ProviderConfig,
        transport: Arc<dyn Transport>,
        cassette: Cassette,
    ) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(LlmClient { config, mode: Mode::Record(transport, cassette), retry: RetryPolicy::default() })
    }

    pub fn replay(config: ProviderConfig, cassette: Cassette) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(LlmClient { config, mode: Mode::Replay(cassette), retry: RetryPolicy::default() })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cassette(&self) -> Option<&Cassette> {
        match &self.mode {
            Mode::Live(_) => None,
            Mode::Record(_, c) | Mode::Replay(c) => Some(c),
        }
    }

    fn send_with_retries(&self, transport: &dyn Transport, prompt: &RenderedPrompt) -> Result<(Value, u32), LlmError> {
        let request = ChatRequest {
            model: &self.config.model_id,
            messages: &prompt.messages,
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match transport.send(&request) {
                Ok(payload) => return Ok((payload, attempts)),
                Err(failure) => {
                    if !failure.retryable() || attempts > self.config.max_retries {
                        return Err(LlmError::Transport {
                            attempts,
                            status: failure.status,
                            message: failure.message,
                        });
                    }
                    log::debug!("attempt {attempts} failed ({:?}); retrying", failure.status);
                    std::thread::sleep(self.retry.delay(attempts - 1));
                }
            }
        }
    }

    pub fn complete(&self, prompt: &RenderedPrompt) -> Result<ModelOutput, LlmError> {
        self.complete_for("", prompt)
    }

    pub fn complete_for(&self, sample_id: &str, prompt: &RenderedPrompt) -> Result<ModelOutput, LlmError> {
        let started = Instant::now();
        let (raw, attempt_count, latency_ms) = match &self.mode {
            Mode::Replay(cassette) => {
                let digest = self.config.request_digest(prompt);
                let raw = cassette.get(&digest).ok_or(LlmError::CassetteMiss { digest })?;
                (raw, 1, 0)
            }
            Mode::Live(transport) => {
                let (raw, attempts) = self.send_with_retries(transport.as_ref(), prompt)?;
                (raw, attempts, started.elapsed().as_millis() as u64)
            }
            Mode::Record(transport, cassette) => {
                let (raw, attempts) = self.send_with_retries(transport.as_ref(), prompt)?;
                cassette.store(&self.config.request_digest(prompt), &raw)?;
                (raw, attempts, started.elapsed().as_millis() as u64)
            }
        };
        let hypothesis = extract_hypothesis(payload_content(&raw)?);
        if hypothesis.is_empty() {
            return Err(LlmError::EmptyHypothesis);
        }
        Ok(ModelOutput {
            sample_id: sample_id.to_string(),
            hypothesis,
            raw,
            model_id: self.config.model_id.clone(),
            latency_ms,
            attempt_count,
        })
    }

    /// Run every prompt with at most `parallelism` requests in flight.
    /// Results are in input order; failures are returned in place.
    /// A `parallelism` of 0 is treated as 1.
    pub fn complete_batch(
        &self,
        prompts: &[(String, RenderedPrompt)],
        parallelism: usize,
    ) -> Vec<Result<ModelOutput, LlmError>> {
        let workers = parallelism.max(1).min(prompts.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ModelOutput, LlmError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((id, prompt)) = prompts.get(i) else { break };
                    let result = self.complete_for(id, prompt);
                    *slots[i].lock().expect("slot lock") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| slot.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
