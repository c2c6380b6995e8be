//! Uniform access to a chat-completion backend with caching, bounded
//! concurrency, retries, and cost accounting.
//!
//! Two backends are provided: [`HttpBackend`] speaks the OpenAI-style
//! chat-completions JSON protocol, and [`MockBackend`] replays a
//! deterministic script, which is what every test and desk-scale experiment
//! runs against.

mod cache;
mod http;
mod mock;

pub use cache::{CacheRecord, DiskCache};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{MockBackend, MockRule, MockScript};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// One backend exchange request. `sample_index` disambiguates
/// otherwise-identical parallel samples; it participates in the cache key
/// unless the gateway is configured otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub sample_index: u64,
}

impl ChatRequest {
    /// The flat prompt text a scripted backend matches against.
    pub fn rendered_prompt(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cached: bool,
    pub backend_id: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("token budget exceeded: used {used} of ceiling {ceiling}")]
    BudgetExceeded { used: u64, ceiling: u64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// What a raw backend returns before the gateway layers caching on top.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Backend failure classification drives the retry decision: only
/// transient failures (timeout, 5xx, 429) are retried.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
    #[error("malformed: {0}")]
    Malformed(String),
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendReply, BackendError>;
    fn id(&self) -> &str;
}

/// Retry transient failures up to `retries` times with exponential backoff
/// starting at `base_backoff` (1s, 2s, 4s, ...).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub retries: u32,
    #[serde(with = "duration_millis")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, base_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    /// Zero backoff, for scripted backends where waiting buys nothing.
    pub fn immediate() -> Self {
        RetryPolicy { retries: 3, base_backoff: Duration::ZERO }
    }
}

mod duration_millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Include `sample_index` in the cache key so parallel samples stay
    /// genuinely distinct at temperature > 0.
    pub sample_distinct: bool,
    /// Ceiling on cumulative live tokens (prompt + completion).
    pub token_ceiling: Option<u64>,
    pub retry: RetryPolicy,
    pub cache_dir: Option<std::path::PathBuf>,
    /// Global cap on backend calls in flight, across every caller.
    pub max_in_flight: Option<usize>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            sample_distinct: true,
            token_ceiling: None,
            retry: RetryPolicy::default(),
            cache_dir: None,
            max_in_flight: None,
        }
    }
}

/// Monotone cost counters. Cached responses add to the totals but never to
/// the live counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSnapshot {
    pub live_calls: u64,
    pub live_prompt_tokens: u64,
    pub live_completion_tokens: u64,
    pub total_prompt_tokens: u64,
    pub total_completion_tokens: u64,
    pub cache_hits: u64,
}

#[derive(Default)]
struct Counters {
    live_calls: AtomicU64,
    live_prompt_tokens: AtomicU64,
    live_completion_tokens: AtomicU64,
    total_prompt_tokens: AtomicU64,
    total_completion_tokens: AtomicU64,
    cache_hits: AtomicU64,
}

/// Thread-safe front over a backend: validation, content-keyed caching with
/// in-flight coalescing, retry with backoff, budget enforcement, and cost
/// accounting. Identical requests issued concurrently share one live call.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    cache: Option<DiskCache>,
    counters: Counters,
    in_flight: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    call_limit: Option<Arc<tokio::sync::Semaphore>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> Result<Self, GatewayError> {
        let cache = match &config.cache_dir {
            Some(dir) => Some(DiskCache::open(dir)?),
            None => None,
        };
        let call_limit =
            config.max_in_flight.map(|n| Arc::new(tokio::sync::Semaphore::new(n.max(1))));
        Ok(Gateway {
            backend,
            config,
            cache,
            counters: Counters::default(),
            in_flight: Mutex::new(HashMap::new()),
            call_limit,
        })
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn cost(&self) -> CostSnapshot {
        CostSnapshot {
            live_calls: self.counters.live_calls.load(Ordering::Relaxed),
            live_prompt_tokens: self.counters.live_prompt_tokens.load(Ordering::Relaxed),
            live_completion_tokens: self.counters.live_completion_tokens.load(Ordering::Relaxed),
            total_prompt_tokens: self.counters.total_prompt_tokens.load(Ordering::Relaxed),
            total_completion_tokens: self.counters.total_completion_tokens.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
        }
    }

    /// Stable content hash over (model, messages, temperature, max_tokens,
    /// and sample_index when the config keeps samples distinct).
    pub fn cache_key(&self, request: &ChatRequest) -> String {
        cache_key(request, self.config.sample_distinct)
    }

    fn validate(&self, request: &ChatRequest) -> Result<(), GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages must be non-empty".into()));
        }
        if request.messages[0].role == Role::Assistant {
            return Err(GatewayError::InvalidRequest(
                "first message role must be system or user".into(),
            ));
        }
        if request.temperature.is_nan() || request.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if request.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    fn check_budget(&self) -> Result<(), GatewayError> {
        if let Some(ceiling) = self.config.token_ceiling {
            let used = self.counters.live_prompt_tokens.load(Ordering::Relaxed)
                + self.counters.live_completion_tokens.load(Ordering::Relaxed);
            if used >= ceiling {
                return Err(GatewayError::BudgetExceeded { used, ceiling });
            }
        }
        Ok(())
    }

    fn record(&self, prompt_tokens: u64, completion_tokens: u64, cached: bool) {
        self.counters.total_prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        self.counters.total_completion_tokens.fetch_add(completion_tokens, Ordering::Relaxed);
        if cached {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.counters.live_calls.fetch_add(1, Ordering::Relaxed);
            self.counters.live_prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
            self.counters.live_completion_tokens.fetch_add(completion_tokens, Ordering::Relaxed);
        }
    }

    fn cached_response(&self, rec: CacheRecord) -> ChatResponse {
        self.record(rec.prompt_tokens, rec.completion_tokens, true);
        ChatResponse {
            text: rec.text,
            prompt_tokens: rec.prompt_tokens,
            completion_tokens: rec.completion_tokens,
            cached: true,
            backend_id: rec.backend_id,
        }
    }

    async fn call_with_retries(&self, request: &ChatRequest) -> Result<BackendReply, GatewayError> {
        let _permit = match &self.call_limit {
            Some(sem) => Some(sem.clone().acquire_owned().await.expect("semaphore never closed")),
            None => None,
        };
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.backend.complete(request).await {
                Ok(reply) => return Ok(reply),
                Err(BackendError::Malformed(msg)) => {
                    return Err(GatewayError::MalformedResponse(msg));
                }
                Err(BackendError::Fatal(msg)) => {
                    return Err(GatewayError::BackendUnavailable { attempts: attempt, last_error: msg });
                }
                Err(BackendError::Transient(msg)) => {
                    if attempt > self.config.retry.retries {
                        return Err(GatewayError::BackendUnavailable {
                            attempts: attempt,
                            last_error: msg,
                        });
                    }
                    let backoff = self.config.retry.base_backoff * 2u32.pow(attempt - 1);
                    if !backoff.is_zero() {
                        tokio::time::sleep(backoff).await;
                    }
                }
            }
        }
    }

    fn flight_slot(&self, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.in_flight.lock().unwrap();
        map.entry(key.to_string()).or_insert_with(|| Arc::new(tokio::sync::Mutex::new(()))).clone()
    }

    fn release_flight_slot(&self, key: &str, slot: &Arc<tokio::sync::Mutex<()>>) {
        let mut map = self.in_flight.lock().unwrap();
        // map holds one reference, we hold another; nobody else is waiting
        if Arc::strong_count(slot) == 2 {
            map.remove(key);
        }
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.validate(request)?;
        let key = self.cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(rec) = cache.get(&key) {
                return Ok(self.cached_response(rec));
            }
        }
        let slot = self.flight_slot(&key);
        let result = async {
            let _guard = slot.lock().await;
            if let Some(cache) = &self.cache {
                if let Some(rec) = cache.get(&key) {
                    return Ok(self.cached_response(rec));
                }
            }
            self.check_budget()?;
            let reply = self.call_with_retries(request).await?;
            let rec = CacheRecord {
                text: reply.text.clone(),
                prompt_tokens: reply.prompt_tokens,
                completion_tokens: reply.completion_tokens,
                backend_id: self.backend.id().to_string(),
            };
            if let Some(cache) = &self.cache {
                cache.put(&key, &rec)?;
            }
            self.record(reply.prompt_tokens, reply.completion_tokens, false);
            Ok(ChatResponse {
                text: reply.text,
                prompt_tokens: reply.prompt_tokens,
                completion_tokens: reply.completion_tokens,
                cached: false,
                backend_id: self.backend.id().to_string(),
            })
        }
        .await;
        self.release_flight_slot(&key, &slot);
        result
    }

    /// Run many requests with at most `parallelism` in flight. Responses come
    /// back in request order. After the first failure no new requests are
    /// issued; in-flight ones drain, then the earliest error is returned.
    pub async fn complete_many(
        &self,
        requests: &[ChatRequest],
        parallelism: usize,
    ) -> Result<Vec<ChatResponse>, GatewayError> {
        if parallelism == 0 {
            return Err(GatewayError::InvalidRequest("parallelism must be >= 1".into()));
        }
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        use futures::stream::{self, StreamExt};
        let fatal = AtomicBool::new(false);
        let fatal_ref = &fatal;
        let results: Vec<Option<Result<ChatResponse, GatewayError>>> =
            stream::iter(requests.iter().map(|req| async move {
                if fatal_ref.load(Ordering::SeqCst) {
                    return None;
                }
                let res = self.complete(req).await;
                if res.is_err() {
                    fatal_ref.store(true, Ordering::SeqCst);
                }
                Some(res)
            }))
            .buffered(parallelism)
            .collect()
            .await;
        let mut out = Vec::with_capacity(requests.len());
        for item in results {
            match item {
                Some(Ok(resp)) => out.push(resp),
                Some(Err(e)) => return Err(e),
                None => {
                    return Err(GatewayError::InvalidRequest(
                        "request skipped after earlier failure".into(),
                    ))
                }
            }
        }
        Ok(out)
    }
}

/// Content hash for a request; hex-encoded SHA-256 with length-prefixed
/// fields so no two distinct requests share an encoding.
pub fn cache_key(request: &ChatRequest, sample_distinct: bool) -> String {
    let mut hasher = Sha256::new();
    let mut field = |tag: &str, data: &[u8]| {
        hasher.update(tag.as_bytes());
        hasher.update((data.len() as u64).to_le_bytes());
        hasher.update(data);
    };
    field("model", request.model_id.as_bytes());
    for msg in &request.messages {
        let role = match msg.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        field("role", role.as_bytes());
        field("content", msg.content.as_bytes());
    }
    field("temperature", &request.temperature.to_bits().to_le_bytes());
    field("max_tokens", &request.max_tokens.to_le_bytes());
    if sample_distinct {
        field("sample_index", &request.sample_index.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
