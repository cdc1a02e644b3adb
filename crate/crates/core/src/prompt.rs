//! Prompt assembly for the greeting and dialogue generation steps, and the
//! tolerant parser for bracketed move tags in generated turns.
//!
//! A greeting prompt has four components (task summary, generation
//! requirements, format setting, conversation history); a dialogue prompt
//! adds activity information between format setting and history. Each
//! component renders under a fixed uppercase header line.

use std::fmt;

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::QuestionType;
use crate::grade::GradeLevel;
use crate::learner::{ChildProfile, ConversationStatus, EngagementLevel, KnowledgeAccuracy};
use crate::providers::PromptPurpose;

pub const MAX_HISTORY_TURNS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Assistant,
    Child,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::Assistant => "Assistant",
            Speaker::Child => "Child",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn assistant(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Assistant, text: text.into() }
    }

    pub fn child(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::Child, text: text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    TaskSummary,
    GenerationRequirements,
    FormatSetting,
    ActivityInfo,
    ConversationHistory,
}

impl ComponentKind {
    pub fn header(self) -> &'static str {
        match self {
            ComponentKind::TaskSummary => "TASK SUMMARY",
            ComponentKind::GenerationRequirements => "GENERATION REQUIREMENTS",
            ComponentKind::FormatSetting => "FORMAT SETTING",
            ComponentKind::ActivityInfo => "ACTIVITY INFORMATION",
            ComponentKind::ConversationHistory => "CONVERSATION HISTORY",
        }
    }
}

pub const GREETING_LAYOUT: [ComponentKind; 4] = [
    ComponentKind::TaskSummary,
    ComponentKind::GenerationRequirements,
    ComponentKind::FormatSetting,
    ComponentKind::ConversationHistory,
];

pub const DIALOGUE_LAYOUT: [ComponentKind; 5] = [
    ComponentKind::TaskSummary,
    ComponentKind::GenerationRequirements,
    ComponentKind::FormatSetting,
    ComponentKind::ActivityInfo,
    ComponentKind::ConversationHistory,
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptComponent {
    pub kind: ComponentKind,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub purpose: PromptPurpose,
    pub components: Vec<PromptComponent>,
    pub rendered: String,
}

impl AssembledPrompt {
    fn new(purpose: PromptPurpose, components: Vec<PromptComponent>) -> Self {
        let rendered = render(&components);
        Self { purpose, components, rendered }
    }

    pub fn kinds(&self) -> Vec<ComponentKind> {
        self.components.iter().map(|c| c.kind).collect()
    }

    pub fn component(&self, kind: ComponentKind) -> Option<&PromptComponent> {
        self.components.iter().find(|c| c.kind == kind)
    }
}

/// Concatenate components under their header lines.
pub fn render(components: &[PromptComponent]) -> String {
    components
        .iter()
        .map(|c| format!("=== {} ===\n{}\n", c.kind.header(), c.body))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_history(history: &[Turn]) -> String {
    let mut lines = Vec::new();
    let skip = history.len().saturating_sub(MAX_HISTORY_TURNS);
    if skip > 0 {
        let child = history[..skip].iter().filter(|t| t.speaker == Speaker::Child).count();
        lines.push(format!(
            "(Earlier conversation: {skip} turns omitted, {child} of them from the child.)"
        ));
    }
    for t in &history[skip..] {
        lines.push(format!("{}: {}", t.speaker.label(), t.text.trim()));
    }
    lines.join("\n")
}

const STATUS_FORMAT: &str = "End every reply with one status line exactly in this form:\n\
<status>{\"answer_judgment\": \"...\", \"topic\": \"...\", \"follow_up_expected\": true}</status>\n\
answer_judgment is one of correct, partially_correct, incorrect, unsure, not_applicable and judges the \
child's latest answer (not_applicable when the child has not answered a question). topic names what the \
child's turn was about in a few words. follow_up_expected is true when your reply asks the child something.";

fn describe_profile(profile: &ChildProfile) -> Vec<String> {
    let mut lines = Vec::new();
    match &profile.nickname {
        Some(name) => lines.push(format!("- Address the child as \"{name}\" throughout the conversation.")),
        None => lines.push("- The child has not shared a name yet; use a warm, friendly form of address.".into()),
    }
    if let Some(age) = profile.age_years {
        lines.push(format!(
            "- The child is {age} years old. Use words, sentence length and tone suited to that age."
        ));
    }
    if !profile.interests.is_empty() {
        lines.push(format!(
            "- The child likes: {}. Weave one of these interests into your question when it fits.",
            profile.interests.join("; ")
        ));
    }
    if let Some(fav) = &profile.favorite_story_or_character {
        lines.push(format!("- The child's favorite story or character: {fav}."));
    }
    if let Some(style) = &profile.language_style {
        lines.push(format!("- Match the child's language style: {style}."));
    }
    lines
}

/// Prompt for the greeting phase, where the child introduces themself.
pub fn build_greeting_prompt(partial_profile: &ChildProfile, history: &[Turn]) -> AssembledPrompt {
    let task = "You are Sparky, a friendly peer-like reading companion for a young child. You are greeting \
the child before reading a storybook together and helping them introduce themselves.";
    let mut req = vec![
        "- Speak in short, warm, child-directed sentences.".to_string(),
        "- Ask for one thing at a time: first the child's name, then their age, then their interests \
(favorite topics, stories or characters)."
            .to_string(),
        "- React to each answer with encouragement before asking the next question.".to_string(),
        "- Once you know the child's name, age and interests, close by introducing the reading activity and \
how to switch reading modes."
            .to_string(),
    ];
    let known = describe_profile(partial_profile);
    if !partial_profile.is_empty() {
        req.push("- Already known about the child:".into());
        req.extend(known.into_iter().map(|l| format!("  {l}")));
    }
    let format = "Reply with the next assistant turn only, as plain text. Ask at most one question per turn. \
When you introduce the reading activity, mark that part with the tag [Introduction of reading activity].";
    AssembledPrompt::new(
        PromptPurpose::Greeting,
        vec![
            PromptComponent { kind: ComponentKind::TaskSummary, body: task.into() },
            PromptComponent { kind: ComponentKind::GenerationRequirements, body: req.join("\n") },
            PromptComponent { kind: ComponentKind::FormatSetting, body: format.into() },
            PromptComponent { kind: ComponentKind::ConversationHistory, body: render_history(history) },
        ],
    )
}

/// Knowledge entry surfaced for a knowledge-extending question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedKnowledge {
    pub entry_id: String,
    pub statement: String,
    pub grade: GradeLevel,
    pub keyword: String,
    pub similarity: f64,
}

/// What the activity information describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeScope {
    /// An interaction point after a page.
    Page { index: usize, of: usize },
    /// The end-of-story conversation.
    StoryEnd,
}

#[derive(Debug, Clone)]
pub struct DialogueInputs<'a> {
    pub scope: EpisodeScope,
    pub story_section: &'a str,
    pub profile: &'a ChildProfile,
    pub summary: &'a str,
    pub status: &'a ConversationStatus,
    pub matched: Option<&'a MatchedKnowledge>,
    pub question_type: QuestionType,
    pub history: &'a [Turn],
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("inconsistent field `{field}`: {reason}")]
    Inconsistent { field: &'static str, reason: &'static str },
}

fn status_lines(status: &ConversationStatus) -> Vec<String> {
    let engagement = match status.engagement_level {
        EngagementLevel::Low => "low",
        EngagementLevel::Medium => "medium",
        EngagementLevel::High => "high",
    };
    let accuracy = match status.knowledge_accuracy {
        KnowledgeAccuracy::Correct => "correct",
        KnowledgeAccuracy::PartiallyCorrect => "partially correct",
        KnowledgeAccuracy::Incorrect => "incorrect or unsure",
        KnowledgeAccuracy::NotAssessed => "not assessed",
    };
    let topics = if status.recent_topics.is_empty() {
        "none yet".to_string()
    } else {
        status.recent_topics.join("; ")
    };
    let mut lines = vec![format!(
        "- Conversation status: engagement {engagement}; last answer {accuracy}; recent topics: {topics}; \
child turns so far: {}.",
        status.turns_taken
    )];
    if status.needs_scaffolding() {
        lines.push(
            "- The child's last answer was incorrect or unsure. Acknowledge the effort kindly, then scaffold: \
give a hint or a simpler sub-question instead of the answer, and tag it [Scaffolding]."
                .into(),
        );
    }
    if status.engagement_level == EngagementLevel::Low {
        lines.push("- Engagement is low. Keep the turn short and playful, and lean on the child's interests.".into());
    }
    lines
}

/// Prompt for one dialogue turn during reading or the end-of-story talk.
pub fn build_dialogue_prompt(inputs: &DialogueInputs<'_>) -> Result<AssembledPrompt, PromptError> {
    match (inputs.question_type, inputs.matched) {
        (QuestionType::KnowledgeExtending, None) => {
            return Err(PromptError::Inconsistent {
                field: "matched",
                reason: "knowledge-extending questions need matched knowledge",
            })
        }
        (QuestionType::StoryBased, Some(_)) => {
            return Err(PromptError::Inconsistent {
                field: "matched",
                reason: "story-based questions must not carry matched knowledge",
            })
        }
        _ => {}
    }

    let task = match inputs.scope {
        EpisodeScope::Page { .. } => "You are Sparky, a friendly peer-like reading companion. You and the child are \
reading a storybook together and have reached an interaction point. Talk with the child about what was just read \
to spark active thinking.",
        EpisodeScope::StoryEnd => "You are Sparky, a friendly peer-like reading companion. You and the child have \
just finished reading a storybook. Talk with the child about the whole story to spark active thinking.",
    };

    let mut req = describe_profile(inputs.profile);
    req.push(
        "- When the child answers, first acknowledge their input and give encouragement or affirmation before \
anything else."
            .into(),
    );
    req.push(
        "- Guide step by step with tailored questions and hints. If the child is wrong or unsure, scaffold with a \
hint or a simpler sub-question rather than giving the answer."
            .into(),
    );
    req.extend(status_lines(inputs.status));
    req.push(match inputs.question_type {
        QuestionType::StoryBased => "- Ask a story-based question grounded in the story content and summary.".into(),
        QuestionType::KnowledgeExtending => "- Ask a knowledge-extending question that connects the story keyword \
to the matched real-world knowledge, at the given knowledge level."
            .into(),
    });

    let format = format!(
        "Reply with the next assistant turn only. Ask at most one question per turn. Label each part of the turn \
with one of these tags, placed right before the part it labels: [Opening], [Story Context], [Integrating Child's \
Interest], [Extending to Real-World Knowledge], [Scaffolding], [Encouraging Feedback]. A reply that responds to \
the child's answer starts with an acknowledgment or an [Encouraging Feedback] part.\n{STATUS_FORMAT}"
    );

    let mut activity = Vec::new();
    match inputs.scope {
        EpisodeScope::Page { index, of } => {
            activity.push(format!("Story section (page {} of {}):", index + 1, of));
            activity.push(inputs.story_section.trim().to_string());
        }
        EpisodeScope::StoryEnd => activity.push("The child has finished the whole story.".into()),
    }
    activity.push(format!("Story summary: {}", inputs.summary.trim()));
    if let Some(m) = inputs.matched {
        activity.push(format!("Keyword: {}", m.keyword));
        activity.push(format!("Matched knowledge: {}", m.statement));
        activity.push(format!("Knowledge level: {}", m.grade.display_name()));
    }

    Ok(AssembledPrompt::new(
        PromptPurpose::Dialogue,
        vec![
            PromptComponent { kind: ComponentKind::TaskSummary, body: task.into() },
            PromptComponent { kind: ComponentKind::GenerationRequirements, body: req.join("\n") },
            PromptComponent { kind: ComponentKind::FormatSetting, body: format },
            PromptComponent { kind: ComponentKind::ActivityInfo, body: activity.join("\n") },
            PromptComponent { kind: ComponentKind::ConversationHistory, body: render_history(inputs.history) },
        ],
    ))
}

/// Scaffolding move labels used in generated turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveTag {
    Opening,
    StoryContext,
    IntegratingInterest,
    ExtendingKnowledge,
    Scaffolding,
    EncouragingFeedback,
    IntroductionOfReadingActivity,
}

impl MoveTag {
    pub const ALL: [MoveTag; 7] = [
        MoveTag::Opening,
        MoveTag::StoryContext,
        MoveTag::IntegratingInterest,
        MoveTag::ExtendingKnowledge,
        MoveTag::Scaffolding,
        MoveTag::EncouragingFeedback,
        MoveTag::IntroductionOfReadingActivity,
    ];

    /// Spelling used when instructing the model and in transcripts.
    pub fn long_form(self) -> &'static str {
        match self {
            MoveTag::Opening => "Opening",
            MoveTag::StoryContext => "Story Context",
            MoveTag::IntegratingInterest => "Integrating Child's Interest",
            MoveTag::ExtendingKnowledge => "Extending to Real-World Knowledge",
            MoveTag::Scaffolding => "Scaffolding",
            MoveTag::EncouragingFeedback => "Encouraging Feedback",
            MoveTag::IntroductionOfReadingActivity => "Introduction of reading activity",
        }
    }

    pub fn identifier(self) -> &'static str {
        match self {
            MoveTag::Opening => "Opening",
            MoveTag::StoryContext => "StoryContext",
            MoveTag::IntegratingInterest => "IntegratingInterest",
            MoveTag::ExtendingKnowledge => "ExtendingKnowledge",
            MoveTag::Scaffolding => "Scaffolding",
            MoveTag::EncouragingFeedback => "EncouragingFeedback",
            MoveTag::IntroductionOfReadingActivity => "IntroductionOfReadingActivity",
        }
    }

    /// Accepts long forms and identifiers, ignoring case, spacing and punctuation.
    pub fn from_label(label: &str) -> Option<Self> {
        let key: String = label
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let squash = |s: &str| -> String {
            s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
        };
        Self::ALL.into_iter().find(|t| {
            key == squash(t.long_form())
                || key == squash(t.identifier())
                || (*t == MoveTag::IntegratingInterest && key == "integratinginterest")
        })
    }
}

impl fmt::Display for MoveTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.identifier())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueMove {
    pub tag: MoveTag,
    pub span: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub clean_text: String,
    pub moves: Vec<DialogueMove>,
    /// Text before the first recognized tag.
    pub leading_text: String,
    pub warnings: Vec<String>,
}

static TAG_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"\[([^\[\]\n]{1,80})\]").unwrap());

/// Split a generated turn into move-tagged spans. Unknown bracketed tokens
/// stay in the text and produce a warning; nothing here is an error.
pub fn parse_move_tags(raw_turn: &str) -> ParsedTurn {
    let mut warnings = Vec::new();
    let mut tags: Vec<(usize, usize, MoveTag)> = Vec::new();
    for cap in TAG_RE.captures_iter(raw_turn) {
        let whole = cap.get(0).expect("match");
        match MoveTag::from_label(&cap[1]) {
            Some(tag) => tags.push((whole.start(), whole.end(), tag)),
            None => warnings.push(format!("unrecognized tag {}", whole.as_str())),
        }
    }

    let mut clean = String::with_capacity(raw_turn.len());
    let mut cursor = 0;
    for &(start, end, _) in &tags {
        clean.push_str(&raw_turn[cursor..start]);
        cursor = end;
        let rest = &raw_turn[cursor..];
        cursor += rest.len() - rest.trim_start_matches([' ', '\t']).len();
    }
    clean.push_str(&raw_turn[cursor..]);

    let leading_end = tags.first().map_or(raw_turn.len(), |t| t.0);
    let leading_text = raw_turn[..leading_end].trim().to_string();

    let mut moves = Vec::with_capacity(tags.len());
    for (i, &(start, end, tag)) in tags.iter().enumerate() {
        let next = tags.get(i + 1).map_or(raw_turn.len(), |t| t.0);
        let mut span = raw_turn[end..next].trim();
        if span.is_empty() {
            // A trailing tag labels what came before it.
            let prev_end = if i == 0 { 0 } else { tags[i - 1].1 };
            span = raw_turn[prev_end..start].trim();
        }
        if span.is_empty() {
            warnings.push(format!("tag [{}] labels no text", tag.long_form()));
            continue;
        }
        moves.push(DialogueMove { tag, span: span.to_string() });
    }

    ParsedTurn {
        clean_text: clean.trim().to_string(),
        moves,
        leading_text,
        warnings,
    }
}

/// Inverse of [`parse_move_tags`] for well-formed move lists.
pub fn render_moves(moves: &[DialogueMove]) -> String {
    moves
        .iter()
        .map(|m| format!("[{}] {}", m.tag.long_form(), m.span))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greeting_prompt_empty_history() {
        let p = build_greeting_prompt(&ChildProfile::default(), &[]);
        assert_eq!(p.kinds(), GREETING_LAYOUT);
        assert_eq!(p.component(ComponentKind::ConversationHistory).unwrap().body, "");
        assert_eq!(p.purpose, PromptPurpose::Greeting);
    }

    #[test]
    fn greeting_history_hand_built() {
        let history = [Turn::assistant("Can you tell me your name?"), Turn::child("My name is Mia.")];
        let p = build_greeting_prompt(&ChildProfile::default(), &history);
        let expected_tail =
            "=== CONVERSATION HISTORY ===\nAssistant: Can you tell me your name?\nChild: My name is Mia.\n";
        assert!(p.rendered.ends_with(expected_tail), "{}", p.rendered);
    }

    #[test]
    fn history_truncates_to_twenty() {
        let history: Vec<Turn> = (0..25)
            .map(|i| if i % 2 == 0 { Turn::assistant(format!("q{i}")) } else { Turn::child(format!("a{i}")) })
            .collect();
        let body = render_history(&history);
        let lines: Vec<_> = body.lines().collect();
        assert_eq!(lines.len(), 21);
        assert_eq!(lines[0], "(Earlier conversation: 5 turns omitted, 2 of them from the child.)");
        assert_eq!(lines[1], "Child: a5");
    }

    #[test]
    fn parse_opening_and_story_context() {
        let p = parse_move_tags("[Opening] Hello! [Story Context] In the story…");
        let tags: Vec<_> = p.moves.iter().map(|m| m.tag).collect();
        assert_eq!(tags, [MoveTag::Opening, MoveTag::StoryContext]);
        assert_eq!(p.moves[0].span, "Hello!");
        assert_eq!(p.moves[1].span, "In the story…");
        assert_eq!(p.clean_text, "Hello! In the story…");
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn parse_untagged() {
        let p = parse_move_tags("Hello there.");
        assert!(p.moves.is_empty());
        assert_eq!(p.clean_text, "Hello there.");
        assert_eq!(p.leading_text, "Hello there.");
    }

    #[test]
    fn parse_unknown_tag_is_tolerated() {
        let p = parse_move_tags("[Banana] hi [Opening] hello");
        assert_eq!(p.moves, [DialogueMove { tag: MoveTag::Opening, span: "hello".into() }]);
        assert_eq!(p.clean_text, "[Banana] hi hello");
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn trailing_tag_labels_preceding_text() {
        let p = parse_move_tags(
            "Peppa Pig is such a fun cartoon character! Mia, it must be fun to like her! [Introduction of reading activity]",
        );
        assert_eq!(p.moves.len(), 1);
        assert_eq!(p.moves[0].tag, MoveTag::IntroductionOfReadingActivity);
        assert!(p.moves[0].span.starts_with("Peppa Pig"));
        assert!(p.clean_text.ends_with("like her!"));
    }

    #[test]
    fn tag_spellings() {
        assert_eq!(MoveTag::from_label("Integrating Child’s Interest"), Some(MoveTag::IntegratingInterest));
        assert_eq!(MoveTag::from_label("IntegratingInterest"), Some(MoveTag::IntegratingInterest));
        assert_eq!(MoveTag::from_label("Extending to Real-World Knowledge"), Some(MoveTag::ExtendingKnowledge));
        assert_eq!(MoveTag::from_label("encouraging feedback"), Some(MoveTag::EncouragingFeedback));
        assert_eq!(MoveTag::from_label("Introduction of reading activity"), Some(MoveTag::IntroductionOfReadingActivity));
        assert_eq!(MoveTag::from_label("Banana"), None);
    }
}
