//! Deterministic providers for offline mode and tests.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    AudioClip, ChatProvider, ChatRequest, ChatResponse, Embedder, OcrEngine, PromptPurpose,
    ProviderError, Recognition, SpeechSynthesizer, TokenUsage,
};
use crate::retrieval::EmbeddingVector;
use crate::text;

/// One scripted reply: the purpose the caller must be asking for, and the
/// canned outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub purpose: PromptPurpose,
    pub outcome: Result<String, ProviderError>,
}

impl ScriptStep {
    pub fn ok(purpose: PromptPurpose, text: impl Into<String>) -> Self {
        Self { purpose, outcome: Ok(text.into()) }
    }

    pub fn fail(purpose: PromptPurpose, error: ProviderError) -> Self {
        Self { purpose, outcome: Err(error) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedFailure {
    Timeout,
    RateLimited,
    Transport,
    Auth,
    Malformed,
    Unavailable,
}

impl From<ScriptedFailure> for ProviderError {
    fn from(f: ScriptedFailure) -> Self {
        match f {
            ScriptedFailure::Timeout => ProviderError::Timeout,
            ScriptedFailure::RateLimited => ProviderError::RateLimited,
            ScriptedFailure::Transport => ProviderError::Transport("scripted transport failure".into()),
            ScriptedFailure::Auth => ProviderError::Auth("scripted auth failure".into()),
            ScriptedFailure::Malformed => ProviderError::Malformed("scripted malformed response".into()),
            ScriptedFailure::Unavailable => ProviderError::Unavailable("scripted outage".into()),
        }
    }
}

/// Fixture record: `{"purpose": "dialogue", "response": "..."}` or
/// `{"purpose": "dialogue", "error": "rate_limited"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRecord {
    pub purpose: PromptPurpose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedFailure>,
}

/// Chat mock that replays an ordered script and fails fast when the caller
/// asks for a different purpose than the next step expects.
#[derive(Debug, Default)]
pub struct ScriptedChat {
    steps: Mutex<std::collections::VecDeque<ScriptStep>>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self {
            steps: Mutex::new(steps.into()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_records(records: Vec<ScriptRecord>) -> Result<Self, String> {
        let steps = records
            .into_iter()
            .enumerate()
            .map(|(i, r)| match (r.response, r.error) {
                (Some(text), None) => Ok(ScriptStep::ok(r.purpose, text)),
                (None, Some(err)) => Ok(ScriptStep::fail(r.purpose, err.into())),
                _ => Err(format!("script record {i} needs exactly one of response/error")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(steps))
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        let records: Vec<ScriptRecord> = serde_json::from_str(json).map_err(|e| e.to_string())?;
        Self::from_records(records)
    }

    pub fn calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().clone()
    }

    pub fn remaining(&self) -> usize {
        self.steps.lock().len()
    }
}

impl ChatProvider for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        self.calls.lock().push(request.clone());
        let mut steps = self.steps.lock();
        let Some(next) = steps.front() else {
            return Err(ProviderError::Script(format!(
                "script exhausted; unexpected {} request",
                request.purpose
            )));
        };
        if next.purpose != request.purpose {
            return Err(ProviderError::Script(format!(
                "expected a {} request, got {}",
                next.purpose, request.purpose
            )));
        }
        let step = steps.pop_front().expect("front exists");
        step.outcome.map(|text| ChatResponse {
            usage: TokenUsage {
                prompt_tokens: request.messages.iter().map(|m| m.content.split_whitespace().count() as u32).sum(),
                completion_tokens: text.split_whitespace().count() as u32,
            },
            text,
        })
    }
}

/// Rule-driven tutor used by `--offline` sessions that have no script.
///
/// It reads the rendered prompt sections and answers with tagged turns and a
/// status trailer, so the full session machinery runs without a model.
#[derive(Debug, Default, Clone)]
pub struct OfflineTutor;

const BAIL_OUTS: &[&str] = &["i don't know", "i do not know", "not sure", "dunno", "no idea"];

impl OfflineTutor {
    fn section<'a>(prompt: &'a str, header: &str) -> &'a str {
        let marker = format!("=== {header} ===\n");
        let Some(start) = prompt.find(&marker) else { return "" };
        let rest = &prompt[start + marker.len()..];
        match rest.find("\n=== ") {
            Some(end) => &rest[..end],
            None => rest,
        }
    }

    fn trailer(judgment: &str, topic: &str, follow_up: bool) -> String {
        format!(
            "\n<status>{}</status>",
            serde_json::json!({"answer_judgment": judgment, "topic": topic, "follow_up_expected": follow_up})
        )
    }

    fn greeting(history: &str) -> String {
        let asked = history.lines().filter(|l| l.starts_with("Assistant:")).count();
        match asked {
            0 => "Hi there, little friend! My name is Sparky, and I'm your reading companion. Can you tell me your name?".into(),
            1 => "It's so nice to meet you! How old are you?".into(),
            2 => "Wow, you must know a lot of things already! Do you have any favorite topics? Like space, princesses, dinosaurs, or cars?".into(),
            _ => "That sounds wonderful! [Introduction of reading activity] Next, we'll start reading together. Are you ready? Let's start reading!".into(),
        }
    }

    fn dialogue(prompt: &str) -> String {
        let history = Self::section(prompt, "CONVERSATION HISTORY");
        let activity = Self::section(prompt, "ACTIVITY INFORMATION");
        let knowledge = activity
            .lines()
            .find_map(|l| l.strip_prefix("Matched knowledge: "))
            .map(str::to_string);
        let last_child = history
            .lines()
            .last()
            .and_then(|l| l.strip_prefix("Child: "))
            .map(text::normalize);
        match last_child {
            None => {
                let mut out = String::from("[Opening] Hello! [Story Context] Let's think about this part of the story.");
                match &knowledge {
                    Some(k) => out.push_str(&format!(
                        " [Extending to Real-World Knowledge] Did you know? {k} What do you think about that?"
                    )),
                    None => out.push_str(" What do you think will happen next?"),
                }
                out + &Self::trailer("not_applicable", "story", true)
            }
            Some(answer) if answer.is_empty() || BAIL_OUTS.iter().any(|b| answer.contains(b)) => {
                "[Scaffolding] That's okay, we can figure it out together. Let's look closely at the story and keep reading!".to_string()
                    + &Self::trailer("unsure", "story", false)
            }
            Some(_) => "[Encouraging Feedback] Great thinking! You're doing so well. Let's keep reading!".to_string()
                + &Self::trailer("correct", "story", false),
        }
    }

    fn summary(prompt: &str) -> String {
        let story = prompt.split_once("Story:\n").map_or("", |(_, s)| s);
        story
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(text::first_sentence)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl ChatProvider for OfflineTutor {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let prompt = request.messages.iter().rev().find(|m| m.content.contains("===") || m.content.contains("Story:\n"))
            .or(request.messages.first())
            .map_or("", |m| m.content.as_str());
        let text = match request.purpose {
            PromptPurpose::Greeting => Self::greeting(Self::section(prompt, "CONVERSATION HISTORY")),
            PromptPurpose::Dialogue => Self::dialogue(prompt),
            PromptPurpose::ProfileExtraction => "{}".to_string(),
            PromptPurpose::Summary => Self::summary(prompt),
        };
        Ok(ChatResponse { text, usage: TokenUsage::default() })
    }
}

/// Concept groups for the fixture embedder: texts listed under one concept
/// embed close to each other.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EmbedderOverrides {
    #[serde(default)]
    pub dimension: Option<usize>,
    #[serde(default)]
    pub concepts: std::collections::BTreeMap<String, Vec<String>>,
}

/// Hash-seeded embedder: each normalized text maps to a pseudo-random vector;
/// texts sharing an override concept share a base vector plus a small
/// text-specific perturbation.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    dimension: usize,
    concept_of: HashMap<String, String>,
    calls: Arc<Mutex<usize>>,
}

pub const FIXTURE_DIMENSION: usize = 128;
const PERTURBATION: f64 = 0.25;

impl Default for FixtureEmbedder {
    fn default() -> Self {
        Self::new(FIXTURE_DIMENSION)
    }
}

impl FixtureEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension: dimension.max(1),
            concept_of: HashMap::new(),
            calls: Arc::new(Mutex::new(0)),
        }
    }

    pub fn with_overrides(overrides: &EmbedderOverrides) -> Self {
        let mut e = Self::new(overrides.dimension.unwrap_or(FIXTURE_DIMENSION));
        for (concept, texts) in &overrides.concepts {
            for t in texts {
                e.concept_of.insert(text::normalize(t), concept.clone());
            }
        }
        e
    }

    /// Number of `embed` calls served.
    pub fn call_count(&self) -> usize {
        *self.calls.lock()
    }

    fn seeded(&self, domain: &str, key: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(domain.as_bytes());
        hasher.update([0u8]);
        hasher.update(key.as_bytes());
        let seed: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    pub fn vector_for(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let norm = text::normalize(text);
        if norm.is_empty() {
            return Err(ProviderError::Contract("cannot embed empty text".into()));
        }
        let own = self.seeded("text", &norm);
        let components = match self.concept_of.get(&norm) {
            Some(concept) => self
                .seeded("concept", concept)
                .into_iter()
                .zip(own)
                .map(|(b, o)| b + PERTURBATION * o)
                .collect(),
            None => own,
        };
        EmbeddingVector::new(components).ok_or_else(|| ProviderError::Malformed("degenerate vector".into()))
    }
}

impl Embedder for FixtureEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        *self.calls.lock() += 1;
        texts.iter().map(|t| self.vector_for(t)).collect()
    }
}

/// Speech mock: the "audio" is the input text behind a marker prefix.
#[derive(Debug, Default)]
pub struct MockSpeech {
    down: bool,
}

pub const STUB_AUDIO_PREFIX: &str = "STUB-AUDIO:";

impl MockSpeech {
    pub fn down() -> Self {
        Self { down: true }
    }
}

impl SpeechSynthesizer for MockSpeech {
    fn synthesize(&self, text: &str) -> Result<AudioClip, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::Contract("cannot synthesize empty text".into()));
        }
        if self.down {
            return Err(ProviderError::Unavailable("speech mock is down".into()));
        }
        Ok(AudioClip {
            media_type: "audio/x-stub".into(),
            bytes: format!("{STUB_AUDIO_PREFIX}{text}").into_bytes(),
        })
    }
}

/// OCR mock. Registered images return their fixture text; otherwise bytes
/// starting with `TEXT:` are read as UTF-8 (confidence 0.99), empty or
/// `BLANK` images give `("", 0.0)`, and anything else is unreadable.
#[derive(Debug, Default)]
pub struct MockOcr {
    fixtures: HashMap<String, Result<Recognition, ProviderError>>,
}

pub const OCR_TEXT_PREFIX: &[u8] = b"TEXT:";

impl MockOcr {
    pub fn with_image(mut self, image: &[u8], text: &str, confidence: f64) -> Self {
        self.fixtures.insert(
            crate::assets::content_key(image),
            Ok(Recognition { text: text.into(), confidence }),
        );
        self
    }

    pub fn with_failure(mut self, image: &[u8]) -> Self {
        self.fixtures.insert(
            crate::assets::content_key(image),
            Err(ProviderError::Unavailable("scripted OCR failure".into())),
        );
        self
    }
}

impl OcrEngine for MockOcr {
    fn recognize(&self, image: &[u8]) -> Result<Recognition, ProviderError> {
        if let Some(r) = self.fixtures.get(&crate::assets::content_key(image)) {
            return r.clone();
        }
        if image.is_empty() || image == b"BLANK" {
            return Ok(Recognition { text: String::new(), confidence: 0.0 });
        }
        if let Some(rest) = image.strip_prefix(OCR_TEXT_PREFIX) {
            return std::str::from_utf8(rest)
                .map(|t| Recognition { text: t.trim().to_string(), confidence: 0.99 })
                .map_err(|_| ProviderError::Malformed("image text is not UTF-8".into()));
        }
        Err(ProviderError::Malformed("unreadable image".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ChatMessage;
    use crate::retrieval::cosine_similarity;

    #[test]
    fn script_purpose_mismatch_fails_fast() {
        let chat = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::Greeting, "hi")]);
        let req = ChatRequest { purpose: PromptPurpose::Dialogue, messages: vec![ChatMessage::user("x")] };
        assert!(matches!(chat.complete(&req), Err(ProviderError::Script(_))));
        assert_eq!(chat.remaining(), 1);
    }

    #[test]
    fn script_from_json() {
        let chat = ScriptedChat::from_json(
            r#"[{"purpose":"greeting","response":"hi"},{"purpose":"dialogue","error":"rate_limited"}]"#,
        )
        .unwrap();
        assert_eq!(chat.remaining(), 2);
        assert!(ScriptedChat::from_json(r#"[{"purpose":"greeting"}]"#).is_err());
    }

    #[test]
    fn fixture_embedder_is_deterministic_and_concept_aware() {
        let overrides = EmbedderOverrides {
            dimension: None,
            concepts: [("water".to_string(), vec!["ocean".to_string(), "Water is wet.".to_string()])]
                .into_iter()
                .collect(),
        };
        let e = FixtureEmbedder::with_overrides(&overrides);
        let a = e.vector_for("Ocean").unwrap();
        assert_eq!(a, e.vector_for("ocean").unwrap());
        let w = e.vector_for("water  is WET.").unwrap();
        let unrelated = e.vector_for("mountain").unwrap();
        assert!(cosine_similarity(&a, &w).unwrap() > 0.85);
        assert!(cosine_similarity(&a, &unrelated).unwrap().abs() < 0.45);
        assert_eq!(a.dimension(), FIXTURE_DIMENSION);
    }

    #[test]
    fn speech_mock() {
        let clip = MockSpeech::default().synthesize("Hello").unwrap();
        assert!(String::from_utf8(clip.bytes).unwrap().contains("Hello"));
        assert!(matches!(MockSpeech::default().synthesize(""), Err(ProviderError::Contract(_))));
        assert!(MockSpeech::down().synthesize("Hello").is_err());
    }

    #[test]
    fn ocr_mock() {
        let ocr = MockOcr::default().with_image(b"fixture-png", "Once upon a time", 0.99);
        let r = ocr.recognize(b"fixture-png").unwrap();
        assert_eq!(r.text, "Once upon a time");
        assert_eq!(r.confidence, 0.99);
        assert!(ocr.recognize(b"\x89PNG garbage").is_err());
        assert_eq!(ocr.recognize(b"BLANK").unwrap(), Recognition { text: String::new(), confidence: 0.0 });
    }
}
