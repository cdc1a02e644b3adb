//! Production HTTP clients. Chat and embeddings speak the common
//! OpenAI-style JSON shapes; speech and OCR post JSON to a configured
//! endpoint. Vendor choice is configuration.

use std::time::{Duration, Instant};

use base64::Engine as _;
use parking_lot::Mutex;
use serde_json::{json, Value};

use super::{
    AudioClip, ChatProvider, ChatRequest, ChatResponse, Embedder, OcrEngine, ProviderConfig,
    ProviderError, Recognition, Secret, SpeechSynthesizer, TokenUsage,
};
use crate::retrieval::EmbeddingVector;

/// Client-side token bucket.
#[derive(Debug)]
pub struct TokenBucket {
    rate_per_sec: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64) -> Self {
        let capacity = rate_per_sec.max(1.0);
        Self {
            rate_per_sec,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Time to wait before one token is available; consumes it.
    pub fn acquire(&self) -> Duration {
        let mut state = self.state.lock();
        let now = Instant::now();
        let (tokens, last) = *state;
        let refilled = (tokens + now.duration_since(last).as_secs_f64() * self.rate_per_sec).min(self.capacity);
        if refilled >= 1.0 {
            *state = (refilled - 1.0, now);
            Duration::ZERO
        } else {
            let wait = (1.0 - refilled) / self.rate_per_sec;
            *state = (0.0, now + Duration::from_secs_f64(wait));
            Duration::from_secs_f64(wait)
        }
    }
}

struct HttpBase {
    config: ProviderConfig,
    secret: Secret,
    client: reqwest::blocking::Client,
    bucket: Option<TokenBucket>,
}

impl std::fmt::Debug for HttpBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBase")
            .field("endpoint", &self.config.endpoint)
            .field("credential_env", &self.config.credential_env)
            .field("secret", &self.secret)
            .finish()
    }
}

impl HttpBase {
    fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        config
            .validate()
            .map_err(|e| ProviderError::Contract(e.to_string()))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let secret = config.resolve_credential();
        let bucket = config.rate_limit_per_sec.filter(|r| *r > 0.0).map(TokenBucket::new);
        Ok(Self { config, secret, client, bucket })
    }

    fn post(&self, url: &str, body: &Value) -> Result<reqwest::blocking::Response, ProviderError> {
        if let Some(bucket) = &self.bucket {
            let wait = bucket.acquire();
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
        let mut req = self.client.post(url).json(body);
        if !self.secret.is_empty() {
            req = req.bearer_auth(self.secret.expose());
        }
        let resp = req.send().map_err(classify_transport)?;
        let status = resp.status();
        match status.as_u16() {
            200..=299 => Ok(resp),
            401 | 403 => Err(ProviderError::Auth(format!("HTTP {status}"))),
            429 => Err(ProviderError::RateLimited),
            408 | 504 => Err(ProviderError::Timeout),
            500..=599 => Err(ProviderError::Transport(format!("HTTP {status}"))),
            _ => Err(ProviderError::Malformed(format!("HTTP {status}"))),
        }
    }

    fn post_json(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        self.post(url, body)?
            .json::<Value>()
            .map_err(|e| ProviderError::Malformed(e.to_string()))
    }

    fn url(&self, suffix: &str) -> String {
        let base = self.config.endpoint.trim_end_matches('/');
        if suffix.is_empty() || base.ends_with(suffix) {
            base.to_string()
        } else {
            format!("{base}{suffix}")
        }
    }
}

fn classify_transport(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Transport(e.to_string())
    }
}

#[derive(Debug)]
pub struct HttpChatClient {
    base: HttpBase,
}

impl HttpChatClient {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { base: HttpBase::new(config)? })
    }
}

impl ChatProvider for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let body = json!({
            "model": self.base.config.model.clone().unwrap_or_default(),
            "messages": request.messages,
        });
        let v = self.base.post_json(&self.base.url("/chat/completions"), &body)?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))?
            .to_string();
        let usage = TokenUsage {
            prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0) as u32,
            completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64).unwrap_or(0) as u32,
        };
        Ok(ChatResponse { text, usage })
    }
}

#[derive(Debug)]
pub struct HttpEmbedder {
    base: HttpBase,
}

impl HttpEmbedder {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { base: HttpBase::new(config)? })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = json!({
            "model": self.base.config.model.clone().unwrap_or_default(),
            "input": texts,
        });
        let v = self.base.post_json(&self.base.url("/embeddings"), &body)?;
        let data = v
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Malformed("missing data array".into()))?;
        data.iter()
            .map(|item| {
                let comps: Vec<f64> = item
                    .get("embedding")
                    .and_then(Value::as_array)
                    .ok_or_else(|| ProviderError::Malformed("missing embedding".into()))?
                    .iter()
                    .map(|c| c.as_f64().ok_or_else(|| ProviderError::Malformed("non-numeric component".into())))
                    .collect::<Result<_, _>>()?;
                EmbeddingVector::new(comps).ok_or_else(|| ProviderError::Malformed("empty or non-finite embedding".into()))
            })
            .collect()
    }
}

#[derive(Debug)]
pub struct HttpSpeechClient {
    base: HttpBase,
}

impl HttpSpeechClient {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { base: HttpBase::new(config)? })
    }
}

impl SpeechSynthesizer for HttpSpeechClient {
    fn synthesize(&self, text: &str) -> Result<AudioClip, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::Contract("cannot synthesize empty text".into()));
        }
        let body = json!({
            "model": self.base.config.model.clone().unwrap_or_default(),
            "input": text,
        });
        let resp = self.base.post(&self.base.url(""), &body)?;
        let media_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|h| h.to_str().ok())
            .unwrap_or("audio/mpeg")
            .to_string();
        let bytes = resp.bytes().map_err(classify_transport)?.to_vec();
        Ok(AudioClip { media_type, bytes })
    }
}

#[derive(Debug)]
pub struct HttpOcrClient {
    base: HttpBase,
}

impl HttpOcrClient {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        Ok(Self { base: HttpBase::new(config)? })
    }
}

impl OcrEngine for HttpOcrClient {
    fn recognize(&self, image: &[u8]) -> Result<Recognition, ProviderError> {
        let body = json!({ "image": base64::engine::general_purpose::STANDARD.encode(image) });
        let v = self.base.post_json(&self.base.url(""), &body)?;
        let text = v
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| ProviderError::Malformed("missing text".into()))?
            .to_string();
        let confidence = v.get("confidence").and_then(Value::as_f64).unwrap_or(0.0).clamp(0.0, 1.0);
        Ok(Recognition { text, confidence })
    }
}
