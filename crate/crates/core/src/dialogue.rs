//! One interaction episode: question planning, turn generation with the
//! move contract and status trailer, and the story summary.

use std::collections::HashMap;
use std::sync::Arc;

use once_cell::sync::Lazy;
use parking_lot::Mutex;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::book::Book;
use crate::learner::ConversationStatus;
use crate::prompt::{parse_move_tags, AssembledPrompt, DialogueMove, MoveTag, PromptError};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, PromptPurpose, ProviderError};
use crate::retrieval::KnowledgeMatch;
use crate::session::ReadingMode;
use crate::text;

pub const SUMMARY_MAX_CHARS: usize = 1200;
pub const CONTRACT_VIOLATION: &str = "move_contract_violation";
pub const STATUS_MALFORMED: &str = "status_block_malformed";
pub const UNRECOGNIZED_TAG: &str = "unrecognized_tag";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    StoryBased,
    KnowledgeExtending,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerJudgment {
    Correct,
    PartiallyCorrect,
    Incorrect,
    Unsure,
    NotApplicable,
    NotAssessed,
}

impl AnswerJudgment {
    pub fn needs_scaffolding(self) -> bool {
        matches!(self, AnswerJudgment::Incorrect | AnswerJudgment::Unsure)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assessment {
    pub answer_judgment: AnswerJudgment,
    pub topic: String,
}

impl Assessment {
    pub fn not_assessed() -> Self {
        Self { answer_judgment: AnswerJudgment::NotAssessed, topic: String::new() }
    }
}

/// Where a generated turn sits in the conversation; decides which parts of
/// the move contract apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnRole {
    Greeting,
    Opening,
    AnswerResponse,
}

impl TurnRole {
    pub fn purpose(self) -> PromptPurpose {
        match self {
            TurnRole::Greeting => PromptPurpose::Greeting,
            TurnRole::Opening | TurnRole::AnswerResponse => PromptPurpose::Dialogue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnWarning {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssistantTurn {
    pub raw_text: String,
    pub clean_text: String,
    pub moves: Vec<DialogueMove>,
    pub assessment: Assessment,
    pub follow_up_expected: bool,
    /// Set when the turn was accepted after the repair attempt also failed.
    pub contract_violations: Vec<String>,
    pub provider_calls: u32,
    pub warnings: Vec<TurnWarning>,
}

impl AssistantTurn {
    pub fn has(&self, tag: MoveTag) -> bool {
        self.moves.iter().any(|m| m.tag == tag)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("a {role:?} turn needs a {expected} prompt, got {found}")]
    PurposeMismatch { role: TurnRole, expected: PromptPurpose, found: PromptPurpose },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("book `{0}` has no page text to summarize")]
    EmptyBook(String),
}

impl DialogueError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, DialogueError::Provider(e) if e.is_retryable())
    }
}

/// Knowledge-extending only with a match and extension switched on.
pub fn plan_question_type(
    matches: &[KnowledgeMatch],
    mode: &ReadingMode,
    _status: &ConversationStatus,
) -> QuestionType {
    if !matches.is_empty() && mode.knowledge_extension_enabled {
        QuestionType::KnowledgeExtending
    } else {
        QuestionType::StoryBased
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct StatusBlock {
    pub answer_judgment: AnswerJudgment,
    #[serde(default)]
    pub topic: String,
    #[serde(default)]
    pub follow_up_expected: Option<bool>,
}

static STATUS_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?s)<status>(.*?)</status>").unwrap());

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatusParse {
    Missing,
    Malformed(String),
    Parsed(StatusBlock),
}

/// Remove status blocks from the turn and parse the last one.
pub fn split_status_block(raw: &str) -> (String, StatusParse) {
    let mut status = StatusParse::Missing;
    for cap in STATUS_RE.captures_iter(raw) {
        status = match serde_json::from_str::<StatusBlock>(cap[1].trim()) {
            Ok(b) => StatusParse::Parsed(b),
            Err(e) => StatusParse::Malformed(e.to_string()),
        };
    }
    let mut body = STATUS_RE.replace_all(raw, "").into_owned();
    if let Some(open) = body.find("<status>") {
        body.truncate(open);
        status = StatusParse::Malformed("unterminated status block".into());
    }
    (body.trim().to_string(), status)
}

struct Evaluated {
    raw: String,
    clean_text: String,
    moves: Vec<DialogueMove>,
    status: StatusParse,
    tag_warnings: Vec<String>,
    violations: Vec<String>,
}

fn evaluate(raw: &str, role: TurnRole) -> Evaluated {
    let (body, status) = split_status_block(raw);
    let parsed = parse_move_tags(&body);
    let mut violations = Vec::new();
    if role != TurnRole::Greeting {
        match &status {
            StatusParse::Missing => violations.push("the status block is missing".to_string()),
            StatusParse::Malformed(e) => violations.push(format!("the status block is malformed: {e}")),
            StatusParse::Parsed(_) => {}
        }
    }
    match role {
        TurnRole::Greeting => {}
        TurnRole::Opening => {
            if parsed.moves.is_empty() {
                violations.push("an opening turn must label its parts with move tags".into());
            }
        }
        TurnRole::AnswerResponse => {
            let acknowledges = !parsed.leading_text.is_empty()
                || parsed
                    .moves
                    .first()
                    .is_some_and(|m| matches!(m.tag, MoveTag::EncouragingFeedback | MoveTag::Scaffolding));
            if !acknowledges {
                violations.push("a reply to the child's answer must open by acknowledging it".into());
            }
            if let StatusParse::Parsed(b) = &status {
                if b.answer_judgment.needs_scaffolding() && !parsed.moves.iter().any(|m| m.tag == MoveTag::Scaffolding) {
                    violations.push("the answer was incorrect or unsure but the turn has no [Scaffolding] part".into());
                }
            }
        }
    }
    Evaluated {
        raw: raw.to_string(),
        clean_text: parsed.clean_text,
        moves: parsed.moves,
        status,
        tag_warnings: parsed.warnings,
        violations,
    }
}

fn repair_instruction(violations: &[String]) -> String {
    let mut out = String::from("Your previous reply broke the reply format:\n");
    for v in violations {
        out.push_str("- ");
        out.push_str(v);
        out.push('\n');
    }
    out.push_str("Write the turn again, following every rule in the FORMAT SETTING section and ending with the status line.");
    out
}

fn finish(e: Evaluated, role: TurnRole, calls: u32, accept_violations: bool) -> AssistantTurn {
    let mut warnings: Vec<TurnWarning> = e
        .tag_warnings
        .iter()
        .map(|w| TurnWarning { code: UNRECOGNIZED_TAG.into(), message: w.clone() })
        .collect();
    let has_question = e.clean_text.contains('?');
    let (assessment, follow_up) = match (&e.status, role) {
        (_, TurnRole::Greeting) => (
            Assessment { answer_judgment: AnswerJudgment::NotApplicable, topic: String::new() },
            !e.moves.iter().any(|m| m.tag == MoveTag::IntroductionOfReadingActivity),
        ),
        (StatusParse::Parsed(b), _) => (
            Assessment { answer_judgment: b.answer_judgment, topic: b.topic.trim().to_string() },
            b.follow_up_expected.unwrap_or(has_question),
        ),
        (StatusParse::Missing | StatusParse::Malformed(_), _) => {
            warnings.push(TurnWarning {
                code: STATUS_MALFORMED.into(),
                message: "no usable status block after repair; answer not assessed".into(),
            });
            (Assessment::not_assessed(), has_question)
        }
    };
    let (moves, violations) = if accept_violations && !e.violations.is_empty() {
        warnings.push(TurnWarning {
            code: CONTRACT_VIOLATION.into(),
            message: e.violations.join("; "),
        });
        (Vec::new(), e.violations)
    } else {
        (e.moves, Vec::new())
    };
    AssistantTurn {
        raw_text: e.raw,
        clean_text: e.clean_text,
        moves,
        assessment,
        follow_up_expected: follow_up,
        contract_violations: violations,
        provider_calls: calls,
        warnings,
    }
}

/// Ask the provider for the next assistant turn. A reply that breaks the
/// move contract is re-asked once; a second failure is accepted with no
/// moves and a contract-violation warning.
pub fn generate_assistant_turn(
    prompt: &AssembledPrompt,
    role: TurnRole,
    chat: &dyn ChatProvider,
) -> Result<AssistantTurn, DialogueError> {
    let expected = role.purpose();
    if prompt.purpose != expected {
        return Err(DialogueError::PurposeMismatch { role, expected, found: prompt.purpose });
    }
    let mut messages = vec![ChatMessage::user(prompt.rendered.clone())];
    let first = chat.complete(&ChatRequest { purpose: expected, messages: messages.clone() })?;
    let first = evaluate(&first.text, role);
    if first.violations.is_empty() {
        return Ok(finish(first, role, 1, false));
    }
    tracing::debug!(violations = ?first.violations, "re-asking provider once");
    messages.push(ChatMessage::assistant(first.raw.clone()));
    messages.push(ChatMessage::user(repair_instruction(&first.violations)));
    let second = chat.complete(&ChatRequest { purpose: expected, messages })?;
    Ok(finish(evaluate(&second.text, role), role, 2, true))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorySummary {
    pub text: String,
    pub source_book_id: String,
    pub degraded: bool,
}

/// First sentence of every page with text, bounded like a real summary.
pub fn degraded_summary(book: &Book) -> StorySummary {
    let text = book
        .pages
        .iter()
        .map(|p| text::first_sentence(&p.text))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    StorySummary {
        text: text::truncate_chars(&text, SUMMARY_MAX_CHARS),
        source_book_id: book.id.clone(),
        degraded: true,
    }
}

const SUMMARY_INSTRUCTIONS: &str = "Summarize this children's story narrative in plain prose, giving the overall \
context: who the characters are, what happens, and what the story teaches.";

/// Summarize a book with the provider, degrading to first sentences when
/// the provider fails or returns nothing.
pub fn summarize_story(book: &Book, chat: &dyn ChatProvider) -> Result<StorySummary, DialogueError> {
    let pages: Vec<&str> = book.pages.iter().map(|p| p.text.trim()).filter(|t| !t.is_empty()).collect();
    if pages.is_empty() {
        return Err(DialogueError::EmptyBook(book.id.clone()));
    }
    let request = ChatRequest {
        purpose: PromptPurpose::Summary,
        messages: vec![ChatMessage::user(format!(
            "{SUMMARY_INSTRUCTIONS} Use at most {SUMMARY_MAX_CHARS} characters.\nTitle: {}\nStory:\n{}",
            book.title,
            pages.join("\n")
        ))],
    };
    match chat.complete(&request) {
        Ok(resp) if !resp.text.trim().is_empty() => Ok(StorySummary {
            text: text::truncate_chars(resp.text.trim(), SUMMARY_MAX_CHARS),
            source_book_id: book.id.clone(),
            degraded: false,
        }),
        Ok(_) => {
            tracing::warn!(book = %book.id, "empty summary from provider; degrading");
            Ok(degraded_summary(book))
        }
        Err(e) => {
            tracing::warn!(book = %book.id, error = %e, "summary provider failed; degrading");
            Ok(degraded_summary(book))
        }
    }
}

/// Memoizes summaries per book id and page content. Degraded summaries are
/// not cached so a later call can still reach the provider.
#[derive(Debug, Default)]
pub struct SummaryCache {
    entries: Mutex<HashMap<String, (String, Arc<StorySummary>)>>,
}

fn book_fingerprint(book: &Book) -> String {
    let mut h = Sha256::new();
    h.update(book.title.as_bytes());
    for p in &book.pages {
        h.update([0u8]);
        h.update(p.text.as_bytes());
    }
    format!("{:x}", h.finalize())
}

impl SummaryCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seed a known summary, e.g. one shipped with a bundled book.
    pub fn insert(&self, book: &Book, summary: StorySummary) -> Arc<StorySummary> {
        let summary = Arc::new(summary);
        self.entries
            .lock()
            .insert(book.id.clone(), (book_fingerprint(book), summary.clone()));
        summary
    }

    pub fn get_or_summarize(&self, book: &Book, chat: &dyn ChatProvider) -> Result<Arc<StorySummary>, DialogueError> {
        let fingerprint = book_fingerprint(book);
        if let Some((fp, s)) = self.entries.lock().get(&book.id) {
            if *fp == fingerprint {
                return Ok(s.clone());
            }
        }
        let summary = Arc::new(summarize_story(book, chat)?);
        if !summary.degraded {
            self.entries.lock().insert(book.id.clone(), (fingerprint, summary.clone()));
        }
        Ok(summary)
    }

    pub fn invalidate(&self, book_id: &str) {
        self.entries.lock().remove(book_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::book::{Book, BookOrigin, Page};
    use crate::grade::GradeLevel;
    use crate::learner::{update_status, KnowledgeAccuracy};
    use crate::prompt::build_greeting_prompt;
    use crate::providers::mock::{ScriptStep, ScriptedChat};
    use crate::retrieval::Keyword;

    fn dialogue_prompt() -> AssembledPrompt {
        AssembledPrompt {
            purpose: PromptPurpose::Dialogue,
            components: Vec::new(),
            rendered: "=== TASK SUMMARY ===\nx\n".into(),
        }
    }

    fn scripted(texts: &[&str]) -> ScriptedChat {
        ScriptedChat::new(texts.iter().map(|t| ScriptStep::ok(PromptPurpose::Dialogue, *t)).collect())
    }

    fn book(pages: &[&str]) -> Book {
        Book {
            id: "b1".into(),
            title: "Test".into(),
            pages: pages
                .iter()
                .enumerate()
                .map(|(i, t)| Page { index: i, text: t.to_string(), image_ref: None, ocr_confidence: None })
                .collect(),
            theme_tags: Vec::new(),
            summary: None,
            origin: BookOrigin::Bundled,
        }
    }

    #[test]
    fn plan_rules() {
        let m = KnowledgeMatch {
            keyword: Keyword { surface: "sunset".into(), section_offset: 4, weight: 2.0 },
            entry_id: "K-sun".into(),
            grade: GradeLevel::Kindergarten,
            similarity: 0.9,
        };
        let status = ConversationStatus::default();
        let on = ReadingMode::default();
        let off = ReadingMode { knowledge_extension_enabled: false, ..ReadingMode::default() };
        assert_eq!(plan_question_type(std::slice::from_ref(&m), &on, &status), QuestionType::KnowledgeExtending);
        assert_eq!(plan_question_type(&[], &on, &status), QuestionType::StoryBased);
        assert_eq!(plan_question_type(&[m], &off, &status), QuestionType::StoryBased);
    }

    #[test]
    fn scaffolding_turn_is_kept_verbatim() {
        let chat = scripted(&[
            "[Scaffolding] No worries, Mia, we can learn together. Let’s continue reading!\n\
<status>{\"answer_judgment\":\"unsure\",\"topic\":\"ice in the ocean\",\"follow_up_expected\":false}</status>",
        ]);
        let t = generate_assistant_turn(&dialogue_prompt(), TurnRole::AnswerResponse, &chat).unwrap();
        assert_eq!(t.moves.len(), 1);
        assert_eq!(t.moves[0].tag, MoveTag::Scaffolding);
        assert_eq!(t.moves[0].span, "No worries, Mia, we can learn together. Let’s continue reading!");
        assert_eq!(t.assessment.answer_judgment, AnswerJudgment::Unsure);
        assert!(!t.follow_up_expected);
        assert_eq!(t.provider_calls, 1);
        assert!(t.contract_violations.is_empty());
    }

    #[test]
    fn untagged_twice_is_accepted_with_violation() {
        let chat = scripted(&["Let's read on.", "Let's read on."]);
        let t = generate_assistant_turn(&dialogue_prompt(), TurnRole::Opening, &chat).unwrap();
        assert!(t.moves.is_empty());
        assert_eq!(t.provider_calls, 2);
        assert!(!t.contract_violations.is_empty());
        assert!(t.warnings.iter().any(|w| w.code == CONTRACT_VIOLATION));
        assert_eq!(t.assessment.answer_judgment, AnswerJudgment::NotAssessed);
        let calls = chat.calls();
        assert_eq!(calls[1].messages.len(), 3);
        assert_eq!(calls[1].messages[1].content, "Let's read on.");
    }

    #[test]
    fn repair_succeeds_on_second_try() {
        let chat = scripted(&[
            "[Encouraging Feedback] Nice try!\n<status>{\"answer_judgment\":\"incorrect\",\"topic\":\"t\"}</status>",
            "[Encouraging Feedback] Nice try! [Scaffolding] Look at the picture: what color is it?\n\
<status>{\"answer_judgment\":\"incorrect\",\"topic\":\"t\",\"follow_up_expected\":true}</status>",
        ]);
        let t = generate_assistant_turn(&dialogue_prompt(), TurnRole::AnswerResponse, &chat).unwrap();
        assert!(t.has(MoveTag::Scaffolding));
        assert!(t.contract_violations.is_empty());
        assert_eq!(t.provider_calls, 2);
    }

    #[test]
    fn correct_judgment_flows_into_status() {
        let chat = scripted(&[
            "Absolutely correct! What would happen if the ice melted?\n\
<status>{\"answer_judgment\":\"correct\",\"topic\":\"salt water\",\"follow_up_expected\":true}</status>",
        ]);
        let t = generate_assistant_turn(&dialogue_prompt(), TurnRole::AnswerResponse, &chat).unwrap();
        assert_eq!(t.assessment.answer_judgment, AnswerJudgment::Correct);
        assert_eq!(t.clean_text, "Absolutely correct! What would happen if the ice melted?");
        let s = update_status(&ConversationStatus::default(), "I think the water in the ocean is salty.", &t.assessment);
        assert_eq!(s.knowledge_accuracy, KnowledgeAccuracy::Correct);
        assert_eq!(s.recent_topics, ["salt water"]);
    }

    #[test]
    fn purpose_must_match_role() {
        let chat = scripted(&[]);
        let greeting = build_greeting_prompt(&Default::default(), &[]);
        let err = generate_assistant_turn(&greeting, TurnRole::Opening, &chat).unwrap_err();
        assert!(matches!(err, DialogueError::PurposeMismatch { .. }));
        assert!(chat.calls().is_empty());
    }

    #[test]
    fn greeting_turn_has_no_contract() {
        let chat = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::Greeting, "Hi! What's your name?")]);
        let p = build_greeting_prompt(&Default::default(), &[]);
        let t = generate_assistant_turn(&p, TurnRole::Greeting, &chat).unwrap();
        assert!(t.follow_up_expected);
        assert_eq!(t.provider_calls, 1);
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn status_block_variants() {
        let (body, s) = split_status_block("Hi <status>{\"answer_judgment\":\"correct\"}</status>");
        assert_eq!(body, "Hi");
        assert!(matches!(s, StatusParse::Parsed(b) if b.answer_judgment == AnswerJudgment::Correct));
        let (body, s) = split_status_block("Hi <status>{\"answer_judgment\":\"great\"}</status>");
        assert_eq!(body, "Hi");
        assert!(matches!(s, StatusParse::Malformed(_)));
        let (body, s) = split_status_block("Hi <status>{\"answer");
        assert_eq!(body, "Hi");
        assert!(matches!(s, StatusParse::Malformed(_)));
        assert_eq!(split_status_block("Hi").1, StatusParse::Missing);
    }

    #[test]
    fn summary_is_memoized() {
        let b = book(&["Once upon a time. More.", "The end."]);
        let chat = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::Summary, "A short tale.")]);
        let cache = SummaryCache::new();
        let a = cache.get_or_summarize(&b, &chat).unwrap();
        let c = cache.get_or_summarize(&b, &chat).unwrap();
        assert!(Arc::ptr_eq(&a, &c));
        assert_eq!(chat.calls().len(), 1);
        assert_eq!(a.text, "A short tale.");
    }

    #[test]
    fn summary_degrades_when_provider_down() {
        let b = book(&["The sun rose. Birds sang."]);
        let chat = ScriptedChat::new(vec![ScriptStep::fail(
            PromptPurpose::Summary,
            ProviderError::Unavailable("down".into()),
        )]);
        let s = summarize_story(&b, &chat).unwrap();
        assert!(s.degraded);
        assert_eq!(s.text, "The sun rose.");
    }

    #[test]
    fn summary_is_bounded() {
        let long = "word ".repeat(600);
        let chat = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::Summary, long)]);
        let s = summarize_story(&book(&["A page."]), &chat).unwrap();
        assert!(s.text.chars().count() <= SUMMARY_MAX_CHARS);
    }

    #[test]
    fn empty_book_cannot_be_summarized() {
        let chat = scripted(&[]);
        assert!(matches!(summarize_story(&book(&[""]), &chat), Err(DialogueError::EmptyBook(_))));
    }
}
