//! Contracts for the four external AI capabilities (chat completion, text
//! embedding, speech synthesis, OCR) plus retry handling.
//!
//! Production HTTP clients live in [`http`]; deterministic mocks that ship in
//! the main build (for `--offline` mode and tests) live in [`mock`].

pub mod http;
pub mod mock;
mod retry;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::retrieval::EmbeddingVector;

pub use retry::{chat_complete, embed_texts, RetryPolicy, RetryingChat, Sleeper};

/// Environment variables holding provider credentials.
pub const CHAT_API_KEY: &str = "CHAT_API_KEY";
pub const EMBED_API_KEY: &str = "EMBED_API_KEY";
pub const SPEECH_API_KEY: &str = "SPEECH_API_KEY";
pub const OCR_API_KEY: &str = "OCR_API_KEY";

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rejected credentials: {0}")]
    Auth(String),
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("scripted provider mismatch: {0}")]
    Script(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Transport(_)
        )
    }
}

/// Which generation step a chat request belongs to. Scripted mocks assert it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPurpose {
    Greeting,
    Dialogue,
    ProfileExtraction,
    Summary,
}

impl fmt::Display for PromptPurpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptPurpose::Greeting => "greeting",
            PromptPurpose::Dialogue => "dialogue",
            PromptPurpose::ProfileExtraction => "profile_extraction",
            PromptPurpose::Summary => "summary",
        })
    }
}

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
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub purpose: PromptPurpose,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: TokenUsage,
}

/// One completed chat round trip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub response_text: String,
    pub usage: TokenUsage,
    pub attempts: u32,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;
}

pub trait Embedder: Send + Sync {
    /// One vector per input text, all of the same dimension.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

pub trait SpeechSynthesizer: Send + Sync {
    fn synthesize(&self, text: &str) -> Result<AudioClip, ProviderError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub text: String,
    pub confidence: f64,
}

pub trait OcrEngine: Send + Sync {
    fn recognize(&self, image: &[u8]) -> Result<Recognition, ProviderError>;
}

/// A credential resolved from the environment. Never printed.
#[derive(Clone, Default)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

/// Endpoint, credential reference and retry settings for one provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the environment variable holding the credential.
    pub credential_env: String,
    #[serde(with = "duration_ms", rename = "timeout_ms")]
    pub timeout: Duration,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// Requests per second allowed by the client-side token bucket.
    #[serde(default)]
    pub rate_limit_per_sec: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("timeout must be positive")]
    ZeroTimeout,
    #[error("retry policy needs at least one attempt")]
    NoAttempts,
    #[error("endpoint must not be empty")]
    EmptyEndpoint,
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, credential_env: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            credential_env: credential_env.into(),
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
            rate_limit_per_sec: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::NoAttempts);
        }
        if self.endpoint.trim().is_empty() {
            return Err(ConfigError::EmptyEndpoint);
        }
        Ok(())
    }

    pub fn resolve_credential(&self) -> Secret {
        Secret::new(std::env::var(&self.credential_env).unwrap_or_default())
    }
}

pub(crate) mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secret_debug_is_scrubbed() {
        let s = Secret::new("sk-very-secret");
        assert!(!format!("{s:?}").contains("very-secret"));
    }

    #[test]
    fn config_validation() {
        let mut c = ProviderConfig::new("http://localhost", CHAT_API_KEY);
        assert!(c.validate().is_ok());
        c.timeout = Duration::ZERO;
        assert_eq!(c.validate(), Err(ConfigError::ZeroTimeout));
        c.timeout = Duration::from_secs(1);
        c.retry.max_attempts = 0;
        assert_eq!(c.validate(), Err(ConfigError::NoAttempts));
    }

    #[test]
    fn retryable_classification() {
        assert!(ProviderError::RateLimited.is_retryable());
        assert!(ProviderError::Timeout.is_retryable());
        assert!(!ProviderError::Auth("bad".into()).is_retryable());
        assert!(!ProviderError::Script("x".into()).is_retryable());
    }
}
