//! Chat-completion providers.
//!
//! Every model call in the pipeline goes through [`ChatProvider::complete`].
//! Backends:
//!
//! - [`HttpProvider`]: a hosted endpoint speaking the common
//!   `/chat/completions` wire format, with bounded retry.
//! - [`ScriptedMock`]: a deterministic scripted backend, also used to replay
//!   recorded transcripts.
//! - [`CachedProvider`]: wraps any provider with a persistent content-hash
//!   cache.
//! - [`Recorder`]: wraps any provider and captures a transcript for replay.

mod cache;
mod http;
mod mock;
mod retry;
mod transcript;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CachedProvider, ResponseCache};
pub use http::{EndpointConfig, HttpProvider};
pub use mock::{Matcher, Reply, ScriptEntry, ScriptedMock};
pub use retry::{with_retry, RetryPolicy};
pub use transcript::{load_transcript, Recorder, TranscriptRecord};

/// Which agent a request is issued on behalf of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Linguistic,
    Comment,
    FactQuestion,
    FactCheck,
    Questioning,
    Optimizer,
    Judge,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Linguistic,
        Role::Comment,
        Role::FactQuestion,
        Role::FactCheck,
        Role::Questioning,
        Role::Optimizer,
        Role::Judge,
    ];

    /// Default sampling temperature. The optimizer samples at 1.0 for
    /// diversity, the judge at 0.0 for consistency.
    pub fn default_temperature(self) -> f64 {
        match self {
            Role::Optimizer => 1.0,
            _ => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Linguistic => "linguistic",
            Role::Comment => "comment",
            Role::FactQuestion => "fact_question",
            Role::FactCheck => "fact_check",
            Role::Questioning => "questioning",
            Role::Optimizer => "optimizer",
            Role::Judge => "judge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub system_prompt: String,
    pub user_content: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes repeated samples of an otherwise identical stochastic
    /// request (e.g. optimizer iteration/retry). Part of the cache key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_tag: Option<String>,
    /// Run-scoped nonce. Optimizer requests are only cached when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_nonce: Option<String>,
}

impl ChatRequest {
    pub fn new(role: Role, system_prompt: impl Into<String>, user_content: impl Into<String>) -> Self {
        Self {
            role,
            system_prompt: system_prompt.into(),
            user_content: user_content.into(),
            temperature: role.default_temperature(),
            max_tokens: DEFAULT_MAX_TOKENS,
            sample_tag: None,
            run_nonce: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_sample_tag(mut self, tag: impl Into<String>) -> Self {
        self.sample_tag = Some(tag.into());
        self
    }

    pub fn with_run_nonce(mut self, nonce: Option<String>) -> Self {
        self.run_nonce = nonce;
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub from_cache: bool,
}

impl ChatResponse {
    pub fn fresh(text: impl Into<String>, usage: Usage) -> Self {
        Self {
            text: text.into(),
            usage,
            from_cache: false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("upstream rejected request with status {status}: {body}")]
    Upstream4xx { status: u16, body: String },
    #[error("upstream failed with status {status}: {body}")]
    Upstream5xx { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed upstream response: {0}")]
    Decode(String),
    #[error("no scripted reply for {role} request: {preview}")]
    NotScripted { role: Role, preview: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl ProviderError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::Transport(_) => true,
            ProviderError::Upstream5xx { .. } => true,
            ProviderError::Upstream4xx { status, .. } => *status == 429,
            _ => false,
        }
    }
}

/// A chat-completion backend. Implementations must be shareable across
/// worker threads.
pub trait ChatProvider: Send + Sync {
    /// Stable identifier of the backend, mixed into cache keys.
    fn endpoint_id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn endpoint_id(&self) -> &str {
        (**self).endpoint_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn endpoint_id(&self) -> &str {
        (**self).endpoint_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }
}

/// SHA-256 digest over the request identity, hex encoded.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn for_request(endpoint_id: &str, request: &ChatRequest) -> Self {
        let mut hasher = Sha256::new();
        let mut field = |bytes: &[u8]| {
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(endpoint_id.as_bytes());
        field(request.system_prompt.as_bytes());
        field(request.user_content.as_bytes());
        field(&request.temperature.to_bits().to_le_bytes());
        field(&request.max_tokens.to_le_bytes());
        field(request.sample_tag.as_deref().unwrap_or("").as_bytes());
        field(request.run_nonce.as_deref().unwrap_or("").as_bytes());
        CacheKey(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn from_hex(hex: impl Into<String>) -> Self {
        CacheKey(hex.into())
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn preview(text: &str) -> String {
    const LIMIT: usize = 80;
    let mut out: String = text.chars().take(LIMIT).collect();
    if text.chars().count() > LIMIT {
        out.push('…');
    }
    out.replace('\n', " ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_default_temperatures() {
        assert_eq!(ChatRequest::new(Role::Optimizer, "s", "u").temperature, 1.0);
        assert_eq!(ChatRequest::new(Role::Judge, "s", "u").temperature, 0.0);
        assert_eq!(ChatRequest::new(Role::Judge, "s", "u").max_tokens, 2048);
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::new(Role::Judge, "s", "u").validate().is_ok());
        assert!(ChatRequest::new(Role::Judge, "s", "u")
            .with_temperature(2.5)
            .validate()
            .is_err());
        assert!(ChatRequest::new(Role::Judge, "s", "u")
            .with_max_tokens(0)
            .validate()
            .is_err());
    }

    #[test]
    fn cache_key_is_sensitive_to_every_field() {
        let base = ChatRequest::new(Role::Judge, "sys", "user");
        let key = CacheKey::for_request("ep", &base);
        assert_eq!(key, CacheKey::for_request("ep", &base.clone()));
        assert_eq!(key.as_str().len(), 64);

        let variants = [
            CacheKey::for_request("ep2", &base),
            CacheKey::for_request("ep", &ChatRequest { system_prompt: "sys2".into(), ..base.clone() }),
            CacheKey::for_request("ep", &ChatRequest { user_content: "user2".into(), ..base.clone() }),
            CacheKey::for_request("ep", &base.clone().with_temperature(1.0)),
            CacheKey::for_request("ep", &base.clone().with_max_tokens(100)),
            CacheKey::for_request("ep", &base.clone().with_sample_tag("1")),
            CacheKey::for_request("ep", &base.clone().with_run_nonce(Some("n".into()))),
        ];
        for v in &variants {
            assert_ne!(&key, v);
        }
    }

    #[test]
    fn field_boundaries_do_not_collide() {
        let a = ChatRequest::new(Role::Judge, "ab", "c");
        let b = ChatRequest::new(Role::Judge, "a", "bc");
        assert_ne!(CacheKey::for_request("e", &a), CacheKey::for_request("e", &b));
    }
}
