use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatExchange, ChatProvider, ChatRequest, ChatResponse, Embedder, ProviderError};
use crate::retrieval::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "super::duration_ms", rename = "backoff_base_ms")]
    pub backoff_base: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    pub fn no_retry() -> Self {
        Self { max_attempts: 1, backoff_base: Duration::ZERO }
    }

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), capped at 30 s.
    pub fn delay_before(&self, retry: u32) -> Duration {
        let factor = 1u32 << retry.saturating_sub(1).min(16);
        (self.backoff_base * factor).min(Duration::from_secs(30))
    }

    /// Run `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget runs out. Returns the value and the attempt count.
    pub fn run<T>(
        &self,
        sleeper: &Sleeper,
        mut op: impl FnMut(u32) -> Result<T, ProviderError>,
    ) -> Result<(T, u32), ProviderError> {
        let max = self.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match op(attempt) {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt < max => {
                    tracing::debug!(attempt, error = %e, "provider call failed, retrying");
                    sleeper.sleep(self.delay_before(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// How retry delays are spent. Tests swap in a recorder.
#[derive(Clone, Default)]
pub enum Sleeper {
    #[default]
    Thread,
    Skip,
    Record(Arc<parking_lot::Mutex<Vec<Duration>>>),
}

impl Sleeper {
    pub fn sleep(&self, d: Duration) {
        match self {
            Sleeper::Thread => std::thread::sleep(d),
            Sleeper::Skip => {}
            Sleeper::Record(log) => log.lock().push(d),
        }
    }
}

/// Send `request` through `provider` under `policy`.
pub fn chat_complete(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    policy: &RetryPolicy,
    sleeper: &Sleeper,
) -> Result<ChatExchange, ProviderError> {
    if request.messages.is_empty() {
        return Err(ProviderError::Contract("chat request has no messages".into()));
    }
    let (resp, attempts) = policy.run(sleeper, |_| provider.complete(request))?;
    Ok(ChatExchange {
        messages: request.messages.clone(),
        response_text: resp.text,
        usage: resp.usage,
        attempts,
    })
}

pub fn embed_texts(
    embedder: &dyn Embedder,
    texts: &[&str],
    policy: &RetryPolicy,
    sleeper: &Sleeper,
) -> Result<Vec<EmbeddingVector>, ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::Contract("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(ProviderError::Contract("cannot embed empty text".into()));
    }
    let (vectors, _) = policy.run(sleeper, |_| embedder.embed(texts))?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::Malformed(format!(
            "expected {} vectors, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    if let Some(first) = vectors.first() {
        if vectors.iter().any(|v| v.dimension() != first.dimension()) {
            return Err(ProviderError::Malformed("mixed embedding dimensions".into()));
        }
    }
    Ok(vectors)
}

/// Chat provider wrapper that applies a retry policy to every call.
pub struct RetryingChat {
    inner: Arc<dyn ChatProvider>,
    policy: RetryPolicy,
    sleeper: Sleeper,
}

impl RetryingChat {
    pub fn new(inner: Arc<dyn ChatProvider>, policy: RetryPolicy, sleeper: Sleeper) -> Self {
        Self { inner, policy, sleeper }
    }
}

impl ChatProvider for RetryingChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.policy
            .run(&self.sleeper, |_| self.inner.complete(request))
            .map(|(r, _)| r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{FixtureEmbedder, ScriptStep, ScriptedChat};
    use crate::providers::{ChatMessage, PromptPurpose};

    fn req() -> ChatRequest {
        ChatRequest {
            purpose: PromptPurpose::Dialogue,
            messages: vec![ChatMessage::user("hello")],
        }
    }

    #[test]
    fn queued_response_is_returned() {
        let chat = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::Dialogue, "hi")]);
        let ex = chat_complete(&chat, &req(), &RetryPolicy::default(), &Sleeper::Skip).unwrap();
        assert_eq!(ex.response_text, "hi");
        assert_eq!(ex.attempts, 1);
    }

    #[test]
    fn fails_twice_then_succeeds_with_three_attempts() {
        let chat = ScriptedChat::new(vec![
            ScriptStep::fail(PromptPurpose::Dialogue, ProviderError::RateLimited),
            ScriptStep::fail(PromptPurpose::Dialogue, ProviderError::Timeout),
            ScriptStep::ok(PromptPurpose::Dialogue, "finally"),
        ]);
        let delays = Arc::new(parking_lot::Mutex::new(Vec::new()));
        let policy = RetryPolicy { max_attempts: 3, backoff_base: Duration::from_millis(10) };
        let ex = chat_complete(&chat, &req(), &policy, &Sleeper::Record(delays.clone())).unwrap();
        assert_eq!(ex.response_text, "finally");
        assert_eq!(ex.attempts, 3);
        assert_eq!(chat.calls().len(), 3);
        let d = delays.lock().clone();
        assert_eq!(d, [Duration::from_millis(10), Duration::from_millis(20)]);
    }

    #[test]
    fn attempts_never_exceed_budget() {
        let chat = ScriptedChat::new(
            (0..5)
                .map(|_| ScriptStep::fail(PromptPurpose::Dialogue, ProviderError::RateLimited))
                .collect(),
        );
        let policy = RetryPolicy { max_attempts: 2, backoff_base: Duration::ZERO };
        let err = chat_complete(&chat, &req(), &policy, &Sleeper::Skip).unwrap_err();
        assert_eq!(err, ProviderError::RateLimited);
        assert_eq!(chat.calls().len(), 2);
    }

    #[test]
    fn exhausted_script_is_a_mock_error() {
        let chat = ScriptedChat::new(vec![]);
        let err = chat_complete(&chat, &req(), &RetryPolicy::default(), &Sleeper::Skip).unwrap_err();
        assert!(matches!(err, ProviderError::Script(_)));
    }

    #[test]
    fn empty_messages_rejected() {
        let chat = ScriptedChat::new(vec![]);
        let r = ChatRequest { purpose: PromptPurpose::Dialogue, messages: vec![] };
        assert!(matches!(
            chat_complete(&chat, &r, &RetryPolicy::default(), &Sleeper::Skip),
            Err(ProviderError::Contract(_))
        ));
    }

    #[test]
    fn backoff_is_non_decreasing() {
        let p = RetryPolicy { max_attempts: 40, backoff_base: Duration::from_millis(3) };
        let delays: Vec<_> = (1..40).map(|r| p.delay_before(r)).collect();
        assert!(delays.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn embed_contract() {
        let e = FixtureEmbedder::default();
        let p = RetryPolicy::default();
        let a = embed_texts(&e, &["ocean"], &p, &Sleeper::Skip).unwrap();
        let b = embed_texts(&e, &["ocean"], &p, &Sleeper::Skip).unwrap();
        assert_eq!(a, b);
        let three = embed_texts(&e, &["a", "b", "c"], &p, &Sleeper::Skip).unwrap();
        assert_eq!(three.len(), 3);
        assert!(three.iter().all(|v| v.dimension() == three[0].dimension()));
        assert!(matches!(
            embed_texts(&e, &[""], &p, &Sleeper::Skip),
            Err(ProviderError::Contract(_))
        ));
    }
}
