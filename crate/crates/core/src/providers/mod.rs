//! Chat-completion client abstraction.
//!
//! - `roster` - model roster file (`ModelSpec`, blocs, endpoints)
//! - `http` - OpenAI-compatible and Anthropic adapters
//! - `mock` - deterministic in-process provider with call instrumentation
//! - `limit` - per-provider parallelism bound and request pacing
//! - `store` - append-only exchange store and record/replay
//!
//! A `Provider` performs exactly one attempt against one endpoint. `Client`
//! adds routing by model id, retries with exponential backoff, and limits.

pub mod http;
pub mod limit;
pub mod mock;
pub mod roster;
pub mod store;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use limit::{Limiter, Pacer};
pub use mock::MockProvider;
pub use roster::{Bloc, Endpoint, EndpointKind, ModelSpec, Roster};
pub use store::{ExchangeContext, ExchangeRecord, ExchangeStore, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// A complete conversation sent in one call. Every request is a fresh
/// conversation; nothing is carried over from earlier calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl ChatRequest {
    /// New conversation with a single user turn.
    pub fn user(text: impl Into<String>) -> Self {
        Self {
            messages: vec![Message {
                role: Role::User,
                content: text.into(),
            }],
            max_tokens: None,
            temperature: None,
        }
    }

    /// New conversation with a system message and one user turn.
    pub fn system_user(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self {
            messages: vec![
                Message {
                    role: Role::System,
                    content: system.into(),
                },
                Message {
                    role: Role::User,
                    content: user.into(),
                },
            ],
            max_tokens: None,
            temperature: None,
        }
    }

    pub fn with_decoding(mut self, max_tokens: Option<u32>, temperature: Option<f64>) -> Self {
        self.max_tokens = max_tokens;
        self.temperature = temperature;
        self
    }

    pub fn system_text(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReplyContent {
    Text { text: String },
    /// Hard refusal by the provider's content filter.
    Refusal { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: ReplyContent,
    /// Number of transport attempts, 1 when the first try succeeded.
    pub attempts: u32,
    #[serde(default)]
    pub latency_ms: u64,
    /// Response body as received, when the provider exposes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

impl ChatReply {
    pub fn text(&self) -> Option<&str> {
        match &self.content {
            ReplyContent::Text { text } => Some(text),
            ReplyContent::Refusal { .. } => None,
        }
    }

    pub fn is_refusal(&self) -> bool {
        matches!(self.content, ReplyContent::Refusal { .. })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("rate limited")]
    RateLimited,
    #[error("content filtered: {0}")]
    ContentFiltered(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timeout")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("model `{0}` is not configured")]
    NotConfigured(String),
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::RateLimited | ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Http { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Text plus the verbatim response body of one successful attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderOutput {
    pub text: String,
    pub raw: Option<String>,
}

impl From<String> for ProviderOutput {
    fn from(text: String) -> Self {
        Self { text, raw: None }
    }
}

/// One endpoint, one attempt.
pub trait Provider: Send + Sync {
    fn call(&self, request: &ChatRequest) -> Result<ProviderOutput, ProviderError>;
}

/// What the rest of the pipeline talks to.
pub trait ChatClient: Send + Sync {
    fn send_chat(&self, model_id: &str, request: &ChatRequest) -> Result<ChatReply, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    /// Delay before attempt `n + 1` after `n` failures (n >= 1).
    pub fn backoff(&self, failures: u32) -> Duration {
        let factor = 1u32.checked_shl(failures.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

struct Route {
    provider: Arc<dyn Provider>,
    limiter: Arc<Limiter>,
    pacer: Option<Arc<Pacer>>,
    defaults: Decoding,
}

/// Per-model default decoding parameters, applied when a request leaves them unset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
}

/// Routes by model id and applies retries and limits.
pub struct Client {
    routes: BTreeMap<String, Route>,
    retry: RetryPolicy,
    calls: AtomicU64,
}

impl Client {
    pub fn new(retry: RetryPolicy) -> Self {
        Self {
            routes: BTreeMap::new(),
            retry,
            calls: AtomicU64::new(0),
        }
    }

    pub fn register(
        &mut self,
        model_id: impl Into<String>,
        provider: Arc<dyn Provider>,
        max_in_flight: usize,
    ) -> &mut Self {
        self.register_with(model_id, provider, Arc::new(Limiter::new(max_in_flight)), None, Decoding::default())
    }

    /// Models that share a limiter share one in-flight budget.
    pub fn register_with(
        &mut self,
        model_id: impl Into<String>,
        provider: Arc<dyn Provider>,
        limiter: Arc<Limiter>,
        pacer: Option<Arc<Pacer>>,
        defaults: Decoding,
    ) -> &mut Self {
        self.routes.insert(
            model_id.into(),
            Route {
                provider,
                limiter,
                pacer,
                defaults,
            },
        );
        self
    }

    pub fn has_model(&self, model_id: &str) -> bool {
        self.routes.contains_key(model_id)
    }

    /// Provider attempts issued so far, across all models.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Builds HTTP routes for every model in the roster.
    pub fn from_roster(roster: &Roster, retry: RetryPolicy) -> Result<Self, ProviderError> {
        let mut client = Client::new(retry);
        let mut limiters: BTreeMap<String, Arc<Limiter>> = BTreeMap::new();
        for spec in &roster.models {
            let ep = &spec.endpoint;
            let provider: Arc<dyn Provider> = match ep.kind {
                EndpointKind::Openai => Arc::new(http::OpenAiCompatible::from_endpoint(ep)?),
                EndpointKind::Anthropic => Arc::new(http::Anthropic::from_endpoint(ep)?),
                EndpointKind::Mock => {
                    return Err(ProviderError::NotConfigured(format!(
                        "{} uses a mock endpoint; run with --mock",
                        spec.model_id
                    )))
                }
            };
            let limiter = limiters
                .entry(ep.provider_key())
                .or_insert_with(|| Arc::new(Limiter::new(ep.max_in_flight.unwrap_or(4))))
                .clone();
            let pacer = ep
                .requests_per_minute
                .map(|rpm| Arc::new(Pacer::per_minute(rpm)));
            client.register_with(
                spec.model_id.clone(),
                provider,
                limiter,
                pacer,
                Decoding {
                    max_tokens: ep.max_tokens,
                    temperature: ep.temperature,
                },
            );
        }
        Ok(client)
    }
}

impl ChatClient for Client {
    fn send_chat(&self, model_id: &str, request: &ChatRequest) -> Result<ChatReply, ProviderError> {
        let route = self
            .routes
            .get(model_id)
            .ok_or_else(|| ProviderError::NotConfigured(model_id.to_string()))?;
        let mut request = request.clone();
        if request.max_tokens.is_none() {
            request.max_tokens = route.defaults.max_tokens;
        }
        if request.temperature.is_none() {
            request.temperature = route.defaults.temperature;
        }

        let started = Instant::now();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(p) = &route.pacer {
                p.wait();
            }
            let outcome = {
                let _slot = route.limiter.acquire();
                self.calls.fetch_add(1, Ordering::SeqCst);
                route.provider.call(&request)
            };
            match outcome {
                Ok(out) => {
                    return Ok(ChatReply {
                        content: ReplyContent::Text { text: out.text },
                        attempts: attempt,
                        latency_ms: started.elapsed().as_millis() as u64,
                        raw_response: out.raw,
                    })
                }
                Err(ProviderError::ContentFiltered(reason)) => {
                    return Ok(ChatReply {
                        content: ReplyContent::Refusal { reason },
                        attempts: attempt,
                        latency_ms: started.elapsed().as_millis() as u64,
                        raw_response: None,
                    })
                }
                Err(e) if e.is_transient() && attempt < self.retry.max_attempts => {
                    tracing::debug!(model_id, attempt, error = %e, "transient failure, retrying");
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) => return Err(e),
            }
        }
    }
}
