//! Child profile capture, age-to-grade mapping and live conversation status.

use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dialogue::{AnswerJudgment, Assessment};
use crate::grade::GradeLevel;
use crate::prompt::{Speaker, Turn};
use crate::providers::{ChatMessage, ChatProvider, ChatRequest, PromptPurpose};
use crate::text;

pub const MIN_AGE: u8 = 3;
pub const MAX_AGE: u8 = 12;
pub const RECENT_TOPICS_CAPACITY: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildProfile {
    pub nickname: Option<String>,
    pub age_years: Option<u8>,
    #[serde(default)]
    pub interests: Vec<String>,
    pub favorite_story_or_character: Option<String>,
    pub language_style: Option<String>,
}

impl ChildProfile {
    pub fn is_empty(&self) -> bool {
        self.nickname.is_none()
            && self.age_years.is_none()
            && self.interests.is_empty()
            && self.favorite_story_or_character.is_none()
            && self.language_style.is_none()
    }

    /// Grade cap for retrieval. Unknown age gates at Kindergarten.
    pub fn grade_cap(&self) -> GradeLevel {
        self.age_years
            .and_then(|a| grade_for_age(a).ok())
            .unwrap_or(GradeLevel::Kindergarten)
    }

    pub fn add_interest(&mut self, interest: &str) {
        let interest = interest.trim();
        if interest.is_empty() {
            return;
        }
        let norm = text::normalize(interest);
        if !self.interests.iter().any(|i| text::normalize(i) == norm) {
            self.interests.push(interest.to_string());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LearnerError {
    #[error("self-introduction has no child turns")]
    NoChildTurns,
    #[error("age {0} is outside the supported range {MIN_AGE}..={MAX_AGE}")]
    AgeOutOfRange(u8),
}

/// Maps age to the highest grade whose knowledge may be surfaced.
/// Preschool ages clamp to Kindergarten; six also maps to Kindergarten.
pub fn grade_for_age(age_years: u8) -> Result<GradeLevel, LearnerError> {
    let grade = match age_years {
        3..=6 => GradeLevel::Kindergarten,
        7 => GradeLevel::Grade1,
        8 => GradeLevel::Grade2,
        9 => GradeLevel::Grade3,
        10 => GradeLevel::Grade4,
        11 | 12 => GradeLevel::Grade5,
        other => return Err(LearnerError::AgeOutOfRange(other)),
    };
    Ok(grade)
}

/// Profile plus anything that went wrong while extracting it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileExtraction {
    pub profile: ChildProfile,
    pub warnings: Vec<String>,
}

impl ProfileExtraction {
    pub fn has_warning(&self) -> bool {
        !self.warnings.is_empty()
    }
}

const NUMBER_WORDS: [(&str, u8); 10] = [
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("eleven", 11),
    ("twelve", 12),
];

fn number_in_token(token: &str) -> Option<u8> {
    let t = text::normalize(token);
    if let Ok(n) = t.parse::<u8>() {
        return Some(n);
    }
    NUMBER_WORDS.iter().find(|(w, _)| *w == t).map(|&(_, n)| n)
}

/// Ages (digits or number words, 3..=12) mentioned in `text`, hyphenated
/// forms like "six-year-old" included.
fn ages_in(text_: &str) -> Vec<u8> {
    text::tokenize(text_)
        .iter()
        .flat_map(|t| t.text.split('-'))
        .filter_map(number_in_token)
        .filter(|n| (MIN_AGE..=MAX_AGE).contains(n))
        .collect()
}

static NAME_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\b(?:my name is|my name's|call me|i am called)\s+([\p{L}][\p{L}'\-]*)").unwrap()
});
static LIKE_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\bI\s+(?:really\s+|also\s+)?(?:like|love|enjoy)s?\s+([^.!?\n]+)").unwrap()
});
static FAVORITE_RE: Lazy<Regex> = Lazy::new(|| {
    Regex::new(r"(?i)\bmy\s+favou?rite\s+(?:story|book|storybook|character)\s+is\s+([^.!?\n]+)").unwrap()
});
static SPLIT_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?i)\s*,\s*(?:and\s+)?|\s+and\s+").unwrap());

fn clean_phrase(s: &str) -> Option<String> {
    let t = s.trim().trim_matches(|c: char| c.is_ascii_punctuation() && c != '\'').trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Pattern-based extraction used when the model output is missing or unusable.
pub fn rule_based_profile(child_texts: &[&str]) -> ChildProfile {
    let mut p = ChildProfile::default();
    for t in child_texts {
        if p.nickname.is_none() {
            p.nickname = NAME_RE
                .captures(t)
                .and_then(|c| clean_phrase(&c[1]))
                .filter(|n| number_in_token(n).is_none());
        }
        if p.age_years.is_none() {
            p.age_years = ages_in(t).into_iter().next();
        }
        for cap in LIKE_RE.captures_iter(t) {
            for part in SPLIT_RE.split(&cap[1]) {
                if let Some(interest) = clean_phrase(part) {
                    p.add_interest(&interest);
                }
            }
        }
        if p.favorite_story_or_character.is_none() {
            p.favorite_story_or_character = FAVORITE_RE.captures(t).and_then(|c| clean_phrase(&c[1]));
        }
    }
    p
}

#[derive(Debug, Default, Deserialize)]
struct ExtractorOutput {
    nickname: Option<String>,
    age_years: Option<serde_json::Value>,
    #[serde(default)]
    interests: Vec<String>,
    favorite_story_or_character: Option<String>,
    language_style: Option<String>,
}

fn parse_extractor_output(raw: &str) -> Option<ExtractorOutput> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    if end < start {
        return None;
    }
    serde_json::from_str(&raw[start..=end]).ok()
}

const EXTRACTION_INSTRUCTIONS: &str = "Extract the child's self-introduction details from the transcript. \
Reply with one JSON object with the keys nickname, age_years, interests (list), favorite_story_or_character \
and language_style (a short free-text description of how the child talks). Use null for anything the child \
did not say. Do not guess.";

/// Build the child's profile from greeting turns. Model output is only kept
/// where it is grounded in what the child actually said; rule-based
/// extraction fills the gaps.
pub fn parse_self_introduction(
    greeting_turns: &[Turn],
    extractor: &dyn ChatProvider,
) -> Result<ProfileExtraction, LearnerError> {
    let child_texts: Vec<&str> = greeting_turns
        .iter()
        .filter(|t| t.speaker == Speaker::Child)
        .map(|t| t.text.as_str())
        .collect();
    if child_texts.is_empty() {
        return Err(LearnerError::NoChildTurns);
    }
    let fallback = rule_based_profile(&child_texts);
    let child_corpus = text::normalize(&child_texts.join("\n"));
    let grounded = |s: &str| {
        let n = text::normalize(s);
        !n.is_empty() && child_corpus.contains(&n)
    };
    let child_ages: Vec<u8> = child_texts.iter().flat_map(|t| ages_in(t)).collect();

    let transcript = greeting_turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker.label(), t.text))
        .collect::<Vec<_>>()
        .join("\n");
    let request = ChatRequest {
        purpose: PromptPurpose::ProfileExtraction,
        messages: vec![
            ChatMessage::system(EXTRACTION_INSTRUCTIONS),
            ChatMessage::user(transcript),
        ],
    };

    let mut warnings = Vec::new();
    let extracted = match extractor.complete(&request) {
        Ok(resp) => {
            let parsed = parse_extractor_output(&resp.text);
            if parsed.is_none() {
                warnings.push("profile extractor output was not a JSON object; using rule-based extraction".to_string());
            }
            parsed
        }
        Err(e) => {
            warnings.push(format!("profile extractor failed ({e}); using rule-based extraction"));
            None
        }
    }
    .unwrap_or_default();

    let age_from_model = extracted.age_years.as_ref().and_then(|v| match v {
        serde_json::Value::Number(n) => n.as_u64().and_then(|n| u8::try_from(n).ok()),
        serde_json::Value::String(s) => ages_in(s).into_iter().next(),
        _ => None,
    });
    let mut profile = ChildProfile {
        nickname: extracted.nickname.filter(|n| grounded(n)).or(fallback.nickname),
        age_years: age_from_model
            .filter(|a| child_ages.contains(a))
            .or(fallback.age_years),
        interests: Vec::new(),
        favorite_story_or_character: extracted
            .favorite_story_or_character
            .filter(|f| grounded(f))
            .or(fallback.favorite_story_or_character),
        language_style: extracted.language_style.and_then(|s| clean_phrase(&s)),
    };
    let model_interests: Vec<&String> = extracted.interests.iter().filter(|i| grounded(i)).collect();
    if model_interests.is_empty() {
        for i in &fallback.interests {
            profile.add_interest(i);
        }
    } else {
        for i in model_interests {
            profile.add_interest(i);
        }
    }
    if profile.is_empty() {
        warnings.push("nothing could be extracted from the self-introduction".to_string());
    }
    Ok(ProfileExtraction { profile, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngagementLevel {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeAccuracy {
    Correct,
    PartiallyCorrect,
    Incorrect,
    NotAssessed,
}

/// Live per-session status steering the next prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationStatus {
    pub engagement_level: EngagementLevel,
    /// Most recent first.
    pub recent_topics: Vec<String>,
    pub knowledge_accuracy: KnowledgeAccuracy,
    pub turns_taken: u32,
    /// Last few child turns, oldest first, for the engagement heuristic.
    #[serde(default)]
    pub recent_child_turns: Vec<String>,
}

impl Default for ConversationStatus {
    fn default() -> Self {
        Self {
            engagement_level: EngagementLevel::Medium,
            recent_topics: Vec::new(),
            knowledge_accuracy: KnowledgeAccuracy::NotAssessed,
            turns_taken: 0,
            recent_child_turns: Vec::new(),
        }
    }
}

impl ConversationStatus {
    /// The last answered question was wrong or the child was unsure.
    pub fn needs_scaffolding(&self) -> bool {
        self.knowledge_accuracy == KnowledgeAccuracy::Incorrect
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementConfig {
    pub bail_out_phrases: Vec<String>,
    pub window: usize,
    pub high_min_avg_tokens: usize,
}

impl Default for EngagementConfig {
    fn default() -> Self {
        Self {
            bail_out_phrases: ["i don't know", "i do not know", "i dont know", "not sure", "dunno", "no idea"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            window: 3,
            high_min_avg_tokens: 5,
        }
    }
}

impl EngagementConfig {
    pub fn is_bail_out(&self, turn: &str) -> bool {
        let n = text::normalize(turn);
        n.is_empty() || self.bail_out_phrases.iter().any(|p| n.contains(p.as_str()))
    }

    pub fn level(&self, window: &[String]) -> EngagementLevel {
        if window.is_empty() {
            return EngagementLevel::Medium;
        }
        let bail_outs = window.iter().filter(|t| self.is_bail_out(t)).count();
        if bail_outs >= 2 {
            return EngagementLevel::Low;
        }
        let tokens: usize = window.iter().map(|t| t.split_whitespace().count()).sum();
        if bail_outs == 0 && tokens >= self.high_min_avg_tokens * window.len() {
            EngagementLevel::High
        } else {
            EngagementLevel::Medium
        }
    }
}

pub fn accuracy_for(judgment: AnswerJudgment) -> KnowledgeAccuracy {
    match judgment {
        AnswerJudgment::Correct => KnowledgeAccuracy::Correct,
        AnswerJudgment::PartiallyCorrect => KnowledgeAccuracy::PartiallyCorrect,
        AnswerJudgment::Incorrect | AnswerJudgment::Unsure => KnowledgeAccuracy::Incorrect,
        AnswerJudgment::NotApplicable | AnswerJudgment::NotAssessed => KnowledgeAccuracy::NotAssessed,
    }
}

pub fn update_status(status: &ConversationStatus, child_turn: &str, assessment: &Assessment) -> ConversationStatus {
    update_status_with(&EngagementConfig::default(), status, child_turn, assessment)
}

pub fn update_status_with(
    config: &EngagementConfig,
    status: &ConversationStatus,
    child_turn: &str,
    assessment: &Assessment,
) -> ConversationStatus {
    let mut next = status.clone();
    next.turns_taken = status.turns_taken.saturating_add(1);
    next.knowledge_accuracy = accuracy_for(assessment.answer_judgment);

    next.recent_child_turns.push(child_turn.to_string());
    let window = config.window.max(1);
    if next.recent_child_turns.len() > window {
        let excess = next.recent_child_turns.len() - window;
        next.recent_child_turns.drain(..excess);
    }
    next.engagement_level = config.level(&next.recent_child_turns);

    let topic = assessment.topic.trim();
    if !topic.is_empty() {
        next.recent_topics.retain(|t| t != topic);
        next.recent_topics.insert(0, topic.to_string());
        next.recent_topics.truncate(RECENT_TOPICS_CAPACITY);
    }
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{ScriptStep, ScriptedChat};
    use crate::providers::ProviderError;
    use proptest::prelude::*;

    fn child(t: &str) -> Turn {
        Turn::child(t)
    }

    fn assistant(t: &str) -> Turn {
        Turn::assistant(t)
    }

    fn no_extractor() -> ScriptedChat {
        ScriptedChat::new(vec![ScriptStep::fail(
            PromptPurpose::ProfileExtraction,
            ProviderError::Unavailable("down".into()),
        )])
    }

    #[test]
    fn grade_mapping_anchors() {
        assert_eq!(grade_for_age(6).unwrap(), GradeLevel::Kindergarten);
        assert_eq!(grade_for_age(8).unwrap(), GradeLevel::Grade2);
        assert_eq!(grade_for_age(3).unwrap(), GradeLevel::Kindergarten);
        assert_eq!(grade_for_age(12).unwrap(), GradeLevel::Grade5);
        assert_eq!(grade_for_age(2), Err(LearnerError::AgeOutOfRange(2)));
        assert_eq!(grade_for_age(13), Err(LearnerError::AgeOutOfRange(13)));
    }

    #[test]
    fn grade_mapping_is_monotone() {
        let grades: Vec<_> = (MIN_AGE..=MAX_AGE).map(|a| grade_for_age(a).unwrap()).collect();
        assert!(grades.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn peppa_pig_fallback() {
        let turns = [
            assistant("How old are you?"),
            child("I’m six years old."),
            assistant("Do you have any favorite topics?"),
            child("I like Peppa Pig."),
        ];
        let out = parse_self_introduction(&turns, &no_extractor()).unwrap();
        assert_eq!(out.profile.age_years, Some(6));
        assert_eq!(out.profile.interests, ["Peppa Pig"]);
        assert!(out.has_warning(), "provider failure is flagged");
    }

    #[test]
    fn two_named_characters() {
        let turns = [child("I’m six years old."), child("I like Princess My Little Pony and Elsa.")];
        let out = parse_self_introduction(&turns, &no_extractor()).unwrap();
        assert_eq!(out.profile.age_years, Some(6));
        assert!(out.profile.interests.contains(&"Princess My Little Pony".to_string()));
        assert!(out.profile.interests.contains(&"Elsa".to_string()));
    }

    #[test]
    fn empty_child_turn_gives_empty_profile_with_warning() {
        let extractor = ScriptedChat::new(vec![ScriptStep::ok(PromptPurpose::ProfileExtraction, "{}")]);
        let out = parse_self_introduction(&[child("")], &extractor).unwrap();
        assert!(out.profile.is_empty());
        assert!(out.has_warning());
    }

    #[test]
    fn no_child_turns_is_a_contract_error() {
        assert_eq!(
            parse_self_introduction(&[assistant("hi")], &no_extractor()),
            Err(LearnerError::NoChildTurns)
        );
    }

    #[test]
    fn model_output_is_grounded() {
        let extractor = ScriptedChat::new(vec![ScriptStep::ok(
            PromptPurpose::ProfileExtraction,
            r#"Sure! {"nickname":"Mia","age_years":9,"interests":["Little animals","robots"],"language_style":"short simple sentences"}"#,
        )]);
        let turns = [child("My name is Mia."), child("I'm eight years old."), child("I like little animals.")];
        let out = parse_self_introduction(&turns, &extractor).unwrap();
        assert_eq!(out.profile.nickname.as_deref(), Some("Mia"));
        // 9 never appears in the transcript; the rule-based 8 wins.
        assert_eq!(out.profile.age_years, Some(8));
        assert_eq!(out.profile.interests, ["Little animals"]);
        assert_eq!(out.profile.language_style.as_deref(), Some("short simple sentences"));
        assert!(!out.has_warning());
    }

    #[test]
    fn ellipsis_name_is_not_a_name() {
        let p = rule_based_profile(&["My name is ...", "I'm seven."]);
        assert_eq!(p.nickname, None);
        assert_eq!(p.age_years, Some(7));
        let p = rule_based_profile(&["I am a six-year-old"]);
        assert_eq!(p.age_years, Some(6));
    }

    fn judged(j: AnswerJudgment, topic: &str) -> Assessment {
        Assessment { answer_judgment: j, topic: topic.into() }
    }

    #[test]
    fn correct_answer_updates_accuracy() {
        let s = update_status(
            &ConversationStatus::default(),
            "I think the water in the ocean is salty.",
            &judged(AnswerJudgment::Correct, "ocean water"),
        );
        assert_eq!(s.turns_taken, 1);
        assert_eq!(s.knowledge_accuracy, KnowledgeAccuracy::Correct);
        assert_eq!(s.recent_topics, ["ocean water"]);
    }

    #[test]
    fn unsure_answer_requests_scaffolding() {
        let s = update_status(&ConversationStatus::default(), "I don't know.", &judged(AnswerJudgment::Unsure, ""));
        assert!(matches!(s.knowledge_accuracy, KnowledgeAccuracy::Incorrect | KnowledgeAccuracy::NotAssessed));
        assert!(s.needs_scaffolding());
    }

    #[test]
    fn seven_topics_keep_five_newest() {
        let mut s = ConversationStatus::default();
        for i in 0..7 {
            s = update_status(&s, "answer", &judged(AnswerJudgment::Correct, &format!("t{i}")));
        }
        // Folding by hand: each update prepends, capacity 5.
        assert_eq!(s.recent_topics, ["t6", "t5", "t4", "t3", "t2"]);
        assert_eq!(s.turns_taken, 7);
    }

    #[test]
    fn engagement_levels() {
        let cfg = EngagementConfig::default();
        let w = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            cfg.level(&w(&["In the sun it feels hot and bright", "The water in the ocean is salty"])),
            EngagementLevel::High
        );
        assert_eq!(cfg.level(&w(&["I don't know.", "", "yes"])), EngagementLevel::Low);
        assert_eq!(cfg.level(&w(&["Turn into water."])), EngagementLevel::Medium);
    }

    proptest! {
        #[test]
        fn turns_taken_counts_updates(n in 0usize..40) {
            let mut s = ConversationStatus::default();
            for i in 0..n {
                let before = s.turns_taken;
                s = update_status(&s, "x", &judged(AnswerJudgment::NotApplicable, &format!("{}", i % 3)));
                prop_assert!(s.turns_taken > before);
                prop_assert!(s.recent_topics.len() <= RECENT_TOPICS_CAPACITY);
            }
            prop_assert_eq!(s.turns_taken as usize, n);
        }

        #[test]
        fn never_fabricates_an_age(
            words in proptest::collection::vec(
                prop_oneof![
                    Just("six".to_string()), Just("years".to_string()), Just("old".to_string()),
                    Just("I'm".to_string()), Just("like".to_string()), Just("14".to_string()),
                    "[a-z]{1,8}", (0u8..20).prop_map(|n| n.to_string()),
                ],
                0..12,
            ),
            claimed in 0u8..20,
        ) {
            let said = words.join(" ");
            let extractor = ScriptedChat::new(vec![ScriptStep::ok(
                PromptPurpose::ProfileExtraction,
                format!(r#"{{"age_years":{claimed}}}"#),
            )]);
            let out = parse_self_introduction(&[Turn::child(said.clone())], &extractor).unwrap();
            if let Some(age) = out.profile.age_years {
                let tokens: Vec<String> = said.split_whitespace().map(text::normalize).collect();
                let spelled = NUMBER_WORDS.iter().find(|(_, n)| *n == age).map(|(w, _)| w.to_string()).unwrap();
                prop_assert!(tokens.contains(&age.to_string()) || tokens.contains(&spelled));
            }
        }
    }
}
