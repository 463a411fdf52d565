//! Uniform client for chat-completion endpoints.
//!
//! Every call goes through [`Gateway::chat`], which validates the request,
//! consults the on-disk cache, applies the per-endpoint concurrency cap and
//! rate limit, and retries transient failures with exponential backoff. The
//! wire transport is pluggable: [`http::HttpTransport`] speaks the
//! `/v1/chat/completions` protocol, [`mock::MockTransport`] replays a playbook.

pub mod cache;
pub mod http;
pub mod limit;
pub mod mock;

use cache::DiskCache;
use limit::EndpointLimiter;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

pub const ENV_BASE_URL: &str = "AF_LLM_BASE_URL";
pub const ENV_API_KEY: &str = "AF_LLM_API_KEY";
pub const ENV_CACHE_DIR: &str = "AF_CACHE_DIR";

/// Sampling temperature for judging and probe decomposition.
pub const JUDGE_TEMPERATURE: f64 = 0.0;
/// Sampling temperature for question generation.
pub const GENERATION_TEMPERATURE: f64 = 0.7;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint {0:?} is not configured")]
    UnknownEndpoint(String),
    #[error("endpoint {endpoint:?} unreachable: {reason}")]
    EndpointUnreachable { endpoint: String, reason: String },
    #[error("http status {code}: {body}")]
    HttpStatus { code: u16, body: String },
    #[error("retries exhausted for {endpoint:?} after {attempts} attempts: {last}")]
    RetriesExhausted {
        endpoint: String,
        attempts: u32,
        last: String,
    },
    #[error("malformed completion payload: {0}")]
    BadResponse(String),
    #[error("cache entry {0} is corrupt")]
    CacheCorrupt(String),
    #[error("no playbook rule matches prompt: {0}")]
    MockMiss(String),
    #[error("io: {0}")]
    Io(String),
}

impl GatewayError {
    /// True when the failure lies with an external service rather than the
    /// caller's input.
    pub fn is_external(&self) -> bool {
        matches!(
            self,
            GatewayError::EndpointUnreachable { .. }
                | GatewayError::HttpStatus { .. }
                | GatewayError::RetriesExhausted { .. }
                | GatewayError::BadResponse(_)
                | GatewayError::MockMiss(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    ImageUrl { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<ContentPart>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message {
            role,
            content: vec![ContentPart::Text { text: text.into() }],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text(Role::User, text)
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text(Role::System, text)
    }

    /// A user turn carrying frame references followed by the text.
    pub fn user_with_frames(frames: &[String], text: impl Into<String>) -> Self {
        let mut content: Vec<ContentPart> = frames
            .iter()
            .map(|url| ContentPart::ImageUrl { url: url.clone() })
            .collect();
        content.push(ContentPart::Text { text: text.into() });
        Message {
            role: Role::User,
            content,
        }
    }

    pub fn text_content(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub endpoint_id: String,
    /// Empty means "the endpoint's configured model".
    #[serde(default)]
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(endpoint_id: impl Into<String>, messages: Vec<Message>) -> Self {
        ChatRequest {
            endpoint_id: endpoint_id.into(),
            model: String::new(),
            messages,
            temperature: JUDGE_TEMPERATURE,
            max_tokens: 512,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidRequest(m.to_string()));
        if self.endpoint_id.is_empty() {
            return bad("endpoint_id is empty");
        }
        match self.messages.last() {
            None => return bad("messages are empty"),
            Some(m) if m.role != Role::User => return bad("last message must have role user"),
            _ => {}
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a non-negative number");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// Canonical form used for cache keys: text parts trimmed of trailing
    /// whitespace, empty text parts dropped.
    pub fn normalized(&self) -> ChatRequest {
        let mut req = self.clone();
        for m in &mut req.messages {
            m.content = m
                .content
                .iter()
                .filter_map(|p| match p {
                    ContentPart::Text { text } => {
                        let t = text.trim_end();
                        (!t.is_empty()).then(|| ContentPart::Text {
                            text: t.to_string(),
                        })
                    }
                    other => Some(other.clone()),
                })
                .collect();
        }
        req
    }

    /// Hex SHA-256 over the canonical JSON of the normalized request.
    pub fn cache_key(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_vec(&self.normalized()).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// The prompt as plain text: one `role: content` block per message.
    pub fn rendered_prompt(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(role);
            out.push_str(": ");
            for p in &m.content {
                match p {
                    ContentPart::Text { text } => out.push_str(text),
                    ContentPart::ImageUrl { url } => {
                        out.push_str("[frame ");
                        out.push_str(url);
                        out.push(']');
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub cached: bool,
}

/// What a transport returns for one attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    /// Could not connect, timed out, or the connection dropped.
    Connect(String),
    Status {
        code: u16,
        body: String,
    },
    BadResponse(String),
    MockMiss(String),
}

impl TransportError {
    fn is_transient(&self) -> bool {
        match self {
            TransportError::Connect(_) => true,
            TransportError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            TransportError::Connect(r) => r.clone(),
            TransportError::Status { code, body } => format!("status {code}: {body}"),
            TransportError::BadResponse(r) | TransportError::MockMiss(r) => r.clone(),
        }
    }
}

/// One attempt against one endpoint.
pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &Endpoint, req: &ChatRequest) -> Result<Completion, TransportError>;

    /// Mock transports report zero tokens and need no endpoint registry.
    fn is_mock(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Auth {
    #[default]
    None,
    Bearer {
        token: String,
    },
    /// Read the bearer token from an environment variable at call time.
    Env {
        var: String,
    },
}

impl Auth {
    pub fn token(&self) -> Option<String> {
        match self {
            Auth::None => None,
            Auth::Bearer { token } => Some(token.clone()),
            Auth::Env { var } => std::env::var(var).ok().filter(|t| !t.is_empty()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub auth: Auth,
}

/// endpoint_id → endpoint configuration.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Registry {
    pub endpoints: BTreeMap<String, Endpoint>,
}

impl Registry {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| GatewayError::InvalidRequest(format!("registry {}: {e}", path.display())))
    }

    /// A `default` endpoint from `AF_LLM_BASE_URL` / `AF_LLM_API_KEY`, if set.
    pub fn from_env() -> Self {
        let mut r = Registry::default();
        if let Ok(base_url) = std::env::var(ENV_BASE_URL) {
            r.endpoints.insert(
                "default".into(),
                Endpoint {
                    base_url,
                    model: String::new(),
                    auth: Auth::Env {
                        var: ENV_API_KEY.into(),
                    },
                },
            );
        }
        r
    }

    pub fn insert(&mut self, id: impl Into<String>, endpoint: Endpoint) {
        self.endpoints.insert(id.into(), endpoint);
    }

    /// Exact id, else the `default` endpoint with the id used as model name.
    pub fn resolve(&self, id: &str) -> Option<Endpoint> {
        if let Some(e) = self.endpoints.get(id) {
            return Some(e.clone());
        }
        self.endpoints.get("default").map(|d| Endpoint {
            model: if d.model.is_empty() {
                id.to_string()
            } else {
                d.model.clone()
            },
            ..d.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(20),
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy {
            max_retries: 0,
            ..Default::default()
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub requests: AtomicU64,
    pub cache_hits: AtomicU64,
    pub transport_calls: AtomicU64,
    pub retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StatsSnapshot {
    pub requests: u64,
    pub cache_hits: u64,
    pub transport_calls: u64,
    pub retries: u64,
}

pub struct GatewayBuilder {
    transport: Arc<dyn Transport>,
    registry: Registry,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    concurrency: usize,
    rate_per_sec: Option<f64>,
}

impl GatewayBuilder {
    pub fn registry(mut self, registry: Registry) -> Self {
        self.registry = registry;
        self
    }

    pub fn cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn cache_dir(mut self, dir: Option<&Path>) -> Result<Self, GatewayError> {
        self.cache = match dir {
            Some(d) => Some(DiskCache::open(d)?),
            None => None,
        };
        Ok(self)
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Maximum in-flight requests per endpoint.
    pub fn concurrency(mut self, c: usize) -> Self {
        self.concurrency = c.max(1);
        self
    }

    pub fn rate_limit(mut self, per_sec: Option<f64>) -> Self {
        self.rate_per_sec = per_sec;
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            transport: self.transport,
            registry: self.registry,
            cache: self.cache,
            retry: self.retry,
            concurrency: self.concurrency,
            rate_per_sec: self.rate_per_sec,
            limiters: Mutex::new(HashMap::new()),
            stats: GatewayStats::default(),
        }
    }
}

/// Thread-safe client handle; share it via `Arc` or by reference.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    registry: Registry,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    concurrency: usize,
    rate_per_sec: Option<f64>,
    limiters: Mutex<HashMap<String, Arc<EndpointLimiter>>>,
    stats: GatewayStats,
}

impl Gateway {
    pub fn builder(transport: Arc<dyn Transport>) -> GatewayBuilder {
        GatewayBuilder {
            transport,
            registry: Registry::default(),
            cache: None,
            retry: RetryPolicy::default(),
            concurrency: 4,
            rate_per_sec: None,
        }
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            requests: self.stats.requests.load(Ordering::Relaxed),
            cache_hits: self.stats.cache_hits.load(Ordering::Relaxed),
            transport_calls: self.stats.transport_calls.load(Ordering::Relaxed),
            retries: self.stats.retries.load(Ordering::Relaxed),
        }
    }

    pub fn cache(&self) -> Option<&DiskCache> {
        self.cache.as_ref()
    }

    pub fn concurrency(&self) -> usize {
        self.concurrency
    }

    fn limiter(&self, endpoint_id: &str) -> Arc<EndpointLimiter> {
        let mut map = self.limiters.lock().expect("limiter map poisoned");
        map.entry(endpoint_id.to_string())
            .or_insert_with(|| Arc::new(EndpointLimiter::new(self.concurrency, self.rate_per_sec)))
            .clone()
    }

    fn resolve(&self, req: &ChatRequest) -> Result<(Endpoint, ChatRequest), GatewayError> {
        let endpoint = match self.registry.resolve(&req.endpoint_id) {
            Some(e) => e,
            None if self.transport.is_mock() => Endpoint {
                base_url: "mock://".into(),
                model: req.endpoint_id.clone(),
                auth: Auth::None,
            },
            None => return Err(GatewayError::UnknownEndpoint(req.endpoint_id.clone())),
        };
        let mut req = req.clone();
        if req.model.is_empty() {
            req.model = if endpoint.model.is_empty() {
                req.endpoint_id.clone()
            } else {
                endpoint.model.clone()
            };
        }
        Ok((endpoint, req))
    }

    pub fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        self.stats.requests.fetch_add(1, Ordering::Relaxed);
        let (endpoint, req) = self.resolve(req)?;
        let key = req.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.get(&key)? {
                self.stats.cache_hits.fetch_add(1, Ordering::Relaxed);
                hit.cached = true;
                return Ok(hit);
            }
        }
        let limiter = self.limiter(&req.endpoint_id);
        let mut attempt = 0u32;
        let response = loop {
            let started = Instant::now();
            let result = {
                let _permit = limiter.acquire();
                self.stats.transport_calls.fetch_add(1, Ordering::Relaxed);
                self.transport.send(&endpoint, &req)
            };
            match result {
                Ok(c) => {
                    break ChatResponse {
                        text: c.text,
                        prompt_tokens: c.prompt_tokens,
                        completion_tokens: c.completion_tokens,
                        latency_ms: if self.transport.is_mock() {
                            0
                        } else {
                            started.elapsed().as_millis() as u64
                        },
                        cached: false,
                    }
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    tracing::warn!(endpoint = %req.endpoint_id, attempt, error = %e.describe(), "transient failure, retrying");
                    std::thread::sleep(self.retry.delay(attempt));
                    attempt += 1;
                    self.stats.retries.fetch_add(1, Ordering::Relaxed);
                }
                Err(e) => return Err(self.final_error(&req.endpoint_id, e, attempt + 1)),
            }
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, &req, &response)?;
        }
        Ok(response)
    }

    fn final_error(&self, endpoint: &str, e: TransportError, attempts: u32) -> GatewayError {
        match e {
            TransportError::Connect(reason) => GatewayError::EndpointUnreachable {
                endpoint: endpoint.to_string(),
                reason: format!("{reason} (after {attempts} attempts)"),
            },
            ref status @ TransportError::Status { code, ref body } => {
                if status.is_transient() {
                    GatewayError::RetriesExhausted {
                        endpoint: endpoint.to_string(),
                        attempts,
                        last: status.describe(),
                    }
                } else {
                    GatewayError::HttpStatus {
                        code,
                        body: body.clone(),
                    }
                }
            }
            TransportError::BadResponse(r) => GatewayError::BadResponse(r),
            TransportError::MockMiss(r) => GatewayError::MockMiss(r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Scripted {
        outcomes: Mutex<Vec<Result<Completion, TransportError>>>,
        calls: AtomicUsize,
    }

    impl Transport for Scripted {
        fn send(&self, _: &Endpoint, _: &ChatRequest) -> Result<Completion, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let mut o = self.outcomes.lock().unwrap();
            if o.is_empty() {
                Ok(Completion {
                    text: "fallback".into(),
                    prompt_tokens: 1,
                    completion_tokens: 1,
                })
            } else {
                o.remove(0)
            }
        }
    }

    fn registry() -> Registry {
        let mut r = Registry::default();
        r.insert(
            "e",
            Endpoint {
                base_url: "http://localhost:1".into(),
                model: "m".into(),
                auth: Auth::None,
            },
        );
        r
    }

    fn fast_retry() -> RetryPolicy {
        RetryPolicy {
            max_retries: 3,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    fn gateway(outcomes: Vec<Result<Completion, TransportError>>) -> (Gateway, Arc<Scripted>) {
        let t = Arc::new(Scripted {
            outcomes: Mutex::new(outcomes),
            calls: AtomicUsize::new(0),
        });
        let g = Gateway::builder(t.clone())
            .registry(registry())
            .retry(fast_retry())
            .build();
        (g, t)
    }

    fn ok(text: &str) -> Result<Completion, TransportError> {
        Ok(Completion {
            text: text.into(),
            prompt_tokens: 3,
            completion_tokens: 2,
        })
    }

    #[test]
    fn request_validation() {
        let mut r = ChatRequest::new("e", vec![]);
        assert!(r.validate().is_err());
        r.messages.push(Message::text(Role::Assistant, "x"));
        assert!(r.validate().is_err());
        r.messages.push(Message::user("q"));
        assert!(r.validate().is_ok());
        assert!(r.clone().with_temperature(-1.0).validate().is_err());
        assert!(r.clone().with_max_tokens(0).validate().is_err());
    }

    #[test]
    fn cache_key_covers_every_field() {
        let base = ChatRequest::new("e", vec![Message::user("hello")]);
        let k = base.cache_key();
        assert_eq!(k.len(), 64);
        assert_eq!(
            k,
            ChatRequest::new("e", vec![Message::user("hello  ")]).cache_key()
        );
        let variants = [
            ChatRequest {
                endpoint_id: "f".into(),
                ..base.clone()
            },
            ChatRequest {
                model: "m2".into(),
                ..base.clone()
            },
            ChatRequest::new("e", vec![Message::user("hello!")]),
            base.clone().with_temperature(0.7),
            base.clone().with_max_tokens(9),
            base.clone().with_seed(Some(1)),
        ];
        for v in variants {
            assert_ne!(v.cache_key(), k);
        }
    }

    #[test]
    fn retries_429_then_succeeds() {
        let (g, t) = gateway(vec![
            Err(TransportError::Status {
                code: 429,
                body: "slow down".into(),
            }),
            ok("fine"),
        ]);
        let r = g
            .chat(&ChatRequest::new("e", vec![Message::user("q")]))
            .unwrap();
        assert_eq!(r.text, "fine");
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
        assert_eq!(g.stats().retries, 1);
    }

    #[test]
    fn persistent_5xx_exhausts_retries() {
        let err = || {
            Err(TransportError::Status {
                code: 503,
                body: "down".into(),
            })
        };
        let (g, t) = gateway(vec![err(), err(), err(), err(), err()]);
        let e = g
            .chat(&ChatRequest::new("e", vec![Message::user("q")]))
            .unwrap_err();
        assert!(matches!(
            e,
            GatewayError::RetriesExhausted { attempts: 4, .. }
        ));
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (g, t) = gateway(vec![Err(TransportError::Status {
            code: 400,
            body: "bad".into(),
        })]);
        let e = g
            .chat(&ChatRequest::new("e", vec![Message::user("q")]))
            .unwrap_err();
        assert_eq!(
            e,
            GatewayError::HttpStatus {
                code: 400,
                body: "bad".into()
            }
        );
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn unknown_endpoint_is_rejected() {
        let (g, _) = gateway(vec![]);
        assert_eq!(
            g.chat(&ChatRequest::new("nope", vec![Message::user("q")])),
            Err(GatewayError::UnknownEndpoint("nope".into()))
        );
    }

    #[test]
    fn model_defaults_from_registry() {
        let (g, _) = gateway(vec![]);
        let (_, r) = g
            .resolve(&ChatRequest::new("e", vec![Message::user("q")]))
            .unwrap();
        assert_eq!(r.model, "m");
    }

    #[test]
    fn backoff_is_capped() {
        let p = RetryPolicy {
            max_retries: 10,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(800),
        };
        let d: Vec<_> = (0..6).map(|i| p.delay(i).as_millis()).collect();
        assert_eq!(d, [100, 200, 400, 800, 800, 800]);
        assert_eq!(p.delay(40), Duration::from_millis(800));
    }
}
