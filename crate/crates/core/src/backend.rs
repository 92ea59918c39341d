//! Model backends: scripted queues, a digest-keyed response cache, and an
//! OpenAI-compatible HTTP chat client with retries and rate limiting.

use std::collections::{BTreeMap, VecDeque};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    /// Base64-encoded image bytes.
    Image { media_type: String, data: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, text)
    }

    pub fn with_png(mut self, png: &[u8]) -> Self {
        self.parts.push(Part::Image {
            media_type: "image/png".into(),
            data: base64::engine::general_purpose::STANDARD.encode(png),
        });
        self
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image { .. }))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    /// SHA-256 of the canonical JSON serialization; the cache key.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(ChatMessage::image_count).sum()
    }
}

/// Model name and sampling settings shared by every request of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Forwarded to backends that accept a sampling seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for RequestParams {
    fn default() -> Self {
        Self {
            model: "unspecified".into(),
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl RequestParams {
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            messages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("HTTP status {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("response has no choice")]
    EmptyChoice,
    #[error("no cached response for request {0}")]
    CacheMiss(String),
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

// ---------------------------------------------------------------------------
// Scripted

/// Pops canned responses in order. With `repeat_last`, the final response is
/// replayed forever; otherwise an empty queue answers `EmptyChoice`.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
    last: Mutex<Option<String>>,
    repeat_last: bool,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            last: Mutex::new(None),
            repeat_last: false,
        }
    }

    pub fn repeating<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            repeat_last: true,
            ..Self::new(responses)
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().expect("queue poisoned").len()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
        let next = self.queue.lock().expect("queue poisoned").pop_front();
        let mut last = self.last.lock().expect("queue poisoned");
        match next {
            Some(r) => {
                *last = Some(r.clone());
                Ok(r)
            }
            None if self.repeat_last => last.clone().ok_or(BackendError::EmptyChoice),
            None => Err(BackendError::EmptyChoice),
        }
    }
}

/// Answers every request with a function of the request.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (self.0)(request)
    }
}

// ---------------------------------------------------------------------------
// Routing

/// A backend borrowed from a shared source or built for one subject.
pub enum Routed<'a> {
    Shared(&'a dyn Backend),
    Owned(Box<dyn Backend + 'a>),
}

impl Backend for Routed<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        match self {
            Routed::Shared(b) => b.complete(request),
            Routed::Owned(b) => b.complete(request),
        }
    }
}

/// Hands out the backend that answers for one subject (a task id or a probe
/// item id). Every plain backend is a source that answers for everyone.
pub trait BackendSource: Sync {
    fn for_subject(&self, subject: &str) -> Routed<'_>;
}

impl<B: Backend> BackendSource for B {
    fn for_subject(&self, _subject: &str) -> Routed<'_> {
        Routed::Shared(self)
    }
}

/// Scripted responses per subject; unknown subjects get an empty script.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptBook {
    pub responses: BTreeMap<String, Vec<String>>,
    /// Keep answering with the last response once a script runs out.
    #[serde(default)]
    pub repeat_last: bool,
}

impl BackendSource for ScriptBook {
    fn for_subject(&self, subject: &str) -> Routed<'_> {
        let script = self.responses.get(subject).cloned().unwrap_or_default();
        Routed::Owned(Box::new(if self.repeat_last {
            ScriptedBackend::repeating(script)
        } else {
            ScriptedBackend::new(script)
        }))
    }
}

// ---------------------------------------------------------------------------
// Cached

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CacheLine {
    digest: String,
    response: String,
}

/// Responses keyed by request digest, persisted as JSON lines.
#[derive(Debug)]
pub struct ResponseStore {
    path: PathBuf,
    entries: Mutex<BTreeMap<String, String>>,
    recorded: AtomicU64,
}

impl ResponseStore {
    /// Open `path`, which need not exist yet.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, crate::LoadError> {
        let path = path.into();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let lines: Vec<CacheLine> = crate::suite::read_jsonl(&path, None)?;
            for l in lines {
                entries.insert(l.digest, l.response);
            }
        }
        Ok(Self {
            path,
            entries: Mutex::new(entries),
            recorded: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, digest: &str) -> Option<String> {
        self.entries.lock().expect("store poisoned").get(digest).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Responses added since the store was opened.
    pub fn recorded(&self) -> u64 {
        self.recorded.load(Ordering::SeqCst)
    }

    /// Add an entry and append it to the file.
    pub fn insert(&self, digest: String, response: String) {
        let mut entries = self.entries.lock().expect("store poisoned");
        let line = crate::suite::to_versioned_line(&CacheLine {
            digest: digest.clone(),
            response: response.clone(),
        });
        if let Some(dir) = self.path.parent() {
            let _ = std::fs::create_dir_all(dir);
        }
        let written = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = written {
            log::warn!("cannot append to {}: {e}", self.path.display());
        }
        entries.insert(digest, response);
        self.recorded.fetch_add(1, Ordering::SeqCst);
    }

    /// Rewrite the file sorted by digest so its bytes do not depend on the
    /// order in which concurrent workers recorded entries.
    pub fn compact(&self) -> std::io::Result<()> {
        let entries = self.entries.lock().expect("store poisoned");
        let mut out = String::new();
        for (digest, response) in entries.iter() {
            out.push_str(&crate::suite::to_versioned_line(&CacheLine {
                digest: digest.clone(),
                response: response.clone(),
            }));
            out.push('\n');
        }
        std::fs::write(&self.path, out)
    }
}

/// Replays stored responses; on a miss asks the delegate (if any) and
/// records its answer.
pub struct CachedBackend<'a> {
    store: Arc<ResponseStore>,
    delegate: Option<Routed<'a>>,
}

impl<'a> CachedBackend<'a> {
    pub fn new(store: Arc<ResponseStore>, delegate: Option<Routed<'a>>) -> Self {
        Self { store, delegate }
    }

    pub fn open(path: impl Into<PathBuf>, delegate: Option<Box<dyn Backend + 'a>>) -> Result<Self, crate::LoadError> {
        Ok(Self::new(Arc::new(ResponseStore::open(path)?), delegate.map(Routed::Owned)))
    }

    pub fn store(&self) -> &Arc<ResponseStore> {
        &self.store
    }
}

impl Backend for CachedBackend<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let digest = request.digest();
        if let Some(hit) = self.store.get(&digest) {
            return Ok(hit);
        }
        let Some(delegate) = &self.delegate else {
            return Err(BackendError::CacheMiss(digest));
        };
        let response = delegate.complete(request)?;
        self.store.insert(digest, response.clone());
        Ok(response)
    }
}

/// A cache in front of a per-subject delegate source.
pub struct CachedSource<'a> {
    pub store: Arc<ResponseStore>,
    pub delegate: Option<&'a dyn BackendSource>,
}

impl BackendSource for CachedSource<'_> {
    fn for_subject(&self, subject: &str) -> Routed<'_> {
        Routed::Owned(Box::new(CachedBackend::new(
            self.store.clone(),
            self.delegate.map(|d| d.for_subject(subject)),
        )))
    }
}

// ---------------------------------------------------------------------------
// HTTP

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub timeout: Duration,
    pub max_concurrent: usize,
    pub min_interval: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key_env: None,
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            timeout: Duration::from_secs(120),
            max_concurrent: 4,
            min_interval: Duration::ZERO,
        }
    }
}

/// Bounds concurrent requests and spaces request starts at least
/// `min_interval` apart, across every thread sharing the backend.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    next_start: Mutex<Option<Instant>>,
    max: usize,
    interval: Duration,
}

struct Permit<'a>(&'a Gate);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        drop(n);
        let wait = {
            let mut next = self.next_start.lock().expect("gate poisoned");
            let now = Instant::now();
            let start = next.map_or(now, |t| t.max(now));
            *next = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit(self)
    }
}

pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    config: HttpConfig,
    token: Option<String>,
    gate: Gate,
    attempts: AtomicU64,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("endpoint", &self.config.endpoint)
            .field("token", &self.token.as_ref().map(|_| "[REDACTED]"))
            .finish()
    }
}

fn wire_message(m: &ChatMessage) -> Value {
    let only_text = m.parts.iter().all(|p| matches!(p, Part::Text { .. }));
    let content = if only_text {
        Value::String(m.text())
    } else {
        Value::Array(
            m.parts
                .iter()
                .map(|p| match p {
                    Part::Text { text } => json!({"type": "text", "text": text}),
                    Part::Image { media_type, data } => json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{media_type};base64,{data}")}
                    }),
                })
                .collect(),
        )
    };
    json!({"role": m.role.as_str(), "content": content})
}

/// Chat-completions request body.
pub fn wire_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
        "messages": request.messages.iter().map(wire_message).collect::<Vec<_>>(),
    });
    if let Some(seed) = request.seed {
        body["seed"] = json!(seed);
    }
    body
}

fn first_choice(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl HttpChatBackend {
    /// Reads the token from `config.api_key_env` now; fails if the variable
    /// is named but unset.
    pub fn new(config: HttpConfig) -> Result<Self, String> {
        let token = match &config.api_key_env {
            None => None,
            Some(var) => Some(
                std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?,
            ),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                next_start: Mutex::new(None),
                max: config.max_concurrent.max(1),
                interval: config.min_interval,
            },
            config,
            token,
            attempts: AtomicU64::new(0),
        })
    }

    /// HTTP requests sent so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn delay(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self
            .config
            .base_delay
            .saturating_mul(1u32 << (attempt - 1).min(16));
        retry_after.unwrap_or(exp).min(self.config.max_delay)
    }

    fn send_once(&self, body: &Value) -> Result<String, (BackendError, Option<Duration>)> {
        let _permit = self.gate.acquire();
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req
            .send()
            .map_err(|e| (BackendError::Network(e.without_url().to_string()), None))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = resp
            .text()
            .map_err(|e| (BackendError::Network(e.without_url().to_string()), None))?;
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(500).collect();
            return Err((BackendError::HttpStatus { status, body }, retry_after));
        }
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| (BackendError::Network(format!("invalid JSON response: {e}")), None))?;
        first_choice(&value).ok_or((BackendError::EmptyChoice, None))
    }
}

impl Backend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = wire_body(request);
        let max = self.config.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err((err, retry_after)) => {
                    let again = match &err {
                        BackendError::Network(_) => true,
                        BackendError::HttpStatus { status, .. } => retryable(*status),
                        _ => false,
                    };
                    if !again || attempt >= max {
                        return Err(err);
                    }
                    let wait = self.delay(attempt, retry_after);
                    log::warn!("attempt {attempt}/{max} failed ({err}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
            }
        }
    }
}
