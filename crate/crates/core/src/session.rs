//! Session state machine. Every change to a session is an event; `advance`
//! both validates an event against the current state and applies it, so
//! replaying a log through `advance` rebuilds the state exactly.

use std::fmt;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::dialogue::{AnswerJudgment, QuestionType, CONTRACT_VIOLATION};
use crate::grade::GradeLevel;
use crate::learner::{ChildProfile, ConversationStatus};
use crate::prompt::{DialogueMove, MatchedKnowledge, MoveTag, Speaker, Turn};

pub const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Frequency {
    EveryPage,
    EveryNPages { n: u32 },
    EndOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadingMode {
    pub interaction_enabled: bool,
    pub frequency: Frequency,
    pub knowledge_extension_enabled: bool,
    pub narration_enabled: bool,
}

impl Default for ReadingMode {
    fn default() -> Self {
        Self {
            interaction_enabled: true,
            frequency: Frequency::EveryPage,
            knowledge_extension_enabled: true,
            narration_enabled: true,
        }
    }
}

impl ReadingMode {
    pub fn validate(&self) -> Result<(), String> {
        match self.frequency {
            Frequency::EveryNPages { n } if n < 2 => Err(format!("every_n_pages needs n >= 2, got {n}")),
            _ => Ok(()),
        }
    }

    fn describe(&self) -> String {
        if !self.interaction_enabled {
            return format!("no interaction, narration {}", on_off(self.narration_enabled));
        }
        let freq = match self.frequency {
            Frequency::EveryPage => "every page".to_string(),
            Frequency::EveryNPages { n } => format!("every {n} pages"),
            Frequency::EndOnly => "end only".to_string(),
        };
        format!(
            "{freq}, knowledge {}, narration {}",
            on_off(self.knowledge_extension_enabled),
            on_off(self.narration_enabled)
        )
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Whether an interaction point follows the page just shown.
pub fn should_interact(page_index: usize, mode: &ReadingMode, is_last_page: bool) -> bool {
    if !mode.interaction_enabled {
        return false;
    }
    match mode.frequency {
        Frequency::EveryPage => true,
        Frequency::EveryNPages { n } => (page_index + 1).is_multiple_of(n.max(1) as usize) || is_last_page,
        Frequency::EndOnly => is_last_page,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    LibraryBrowse,
    Greeting,
    ModeSetup,
    Reading,
    Interaction,
    Summary,
    Completed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventPayload {
    SessionStarted {
        session_id: String,
        child_id: String,
        book_id: String,
        book_title: String,
        page_count: usize,
        greeting: bool,
        #[serde(default)]
        profile: Option<ChildProfile>,
    },
    GreetingTurn {
        speaker: Speaker,
        text: String,
        #[serde(default)]
        moves: Vec<DialogueMove>,
        #[serde(default)]
        audio_key: Option<String>,
    },
    ProfileCaptured {
        profile: ChildProfile,
        #[serde(default)]
        warnings: Vec<String>,
    },
    ModeSet {
        mode: ReadingMode,
    },
    PageShown {
        page_index: usize,
        #[serde(default)]
        audio_key: Option<String>,
    },
    InteractionTurn {
        speaker: Speaker,
        text: String,
        #[serde(default)]
        moves: Vec<DialogueMove>,
        #[serde(default)]
        question_type: Option<QuestionType>,
        follow_up_expected: bool,
        #[serde(default)]
        child_initiated: bool,
        #[serde(default)]
        audio_key: Option<String>,
    },
    KnowledgeSurfaced {
        page_index: Option<usize>,
        entry_id: String,
        statement: String,
        grade: GradeLevel,
        keyword: String,
        similarity: f64,
    },
    AnswerAssessed {
        judgment: AnswerJudgment,
        topic: String,
        status: ConversationStatus,
    },
    SummaryTurn {
        speaker: Speaker,
        text: String,
        #[serde(default)]
        moves: Vec<DialogueMove>,
        follow_up_expected: bool,
        #[serde(default)]
        audio_key: Option<String>,
    },
    SessionCompleted {
        pages_shown: usize,
    },
    Warning {
        code: String,
        message: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::SessionStarted { .. } => "session_started",
            EventPayload::GreetingTurn { .. } => "greeting_turn",
            EventPayload::ProfileCaptured { .. } => "profile_captured",
            EventPayload::ModeSet { .. } => "mode_set",
            EventPayload::PageShown { .. } => "page_shown",
            EventPayload::InteractionTurn { .. } => "interaction_turn",
            EventPayload::KnowledgeSurfaced { .. } => "knowledge_surfaced",
            EventPayload::AnswerAssessed { .. } => "answer_assessed",
            EventPayload::SummaryTurn { .. } => "summary_turn",
            EventPayload::SessionCompleted { .. } => "session_completed",
            EventPayload::Warning { .. } => "warning",
        }
    }

    pub fn warning(code: &str, message: impl Into<String>) -> Self {
        EventPayload::Warning { code: code.to_string(), message: message.into() }
    }
}

/// One persisted event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub v: u32,
    pub seq: u64,
    pub session_id: String,
    pub child_id: String,
    pub mono_ns: u64,
    pub wall: DateTime<Utc>,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    Page,
    ChildInitiated,
    StoryEnd,
}

/// The conversation at one interaction point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub kind: EpisodeKind,
    pub page_index: Option<usize>,
    pub question_type: QuestionType,
    pub knowledge: Option<MatchedKnowledge>,
    pub turns: Vec<Turn>,
}

impl Episode {
    pub fn awaiting_child(&self) -> bool {
        self.turns.last().is_some_and(|t| t.speaker == Speaker::Assistant)
    }

    pub fn awaiting_assistant(&self) -> bool {
        self.turns.last().is_some_and(|t| t.speaker == Speaker::Child)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub child_id: String,
    pub book_id: String,
    pub book_title: String,
    pub phase: Phase,
    pub page_index: usize,
    pub page_count: usize,
    pub pages_shown: usize,
    pub mode: Option<ReadingMode>,
    pub profile: Option<ChildProfile>,
    pub status: ConversationStatus,
    pub greeting_turns: Vec<Turn>,
    pub episode: Option<Episode>,
    pub pending_knowledge: Option<MatchedKnowledge>,
    /// Distinct surfaced entry ids, first surfaced first.
    pub surfaced: Vec<String>,
    pub interaction_turns: u32,
    pub events_applied: u64,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            session_id: String::new(),
            child_id: String::new(),
            book_id: String::new(),
            book_title: String::new(),
            phase: Phase::LibraryBrowse,
            page_index: 0,
            page_count: 0,
            pages_shown: 0,
            mode: None,
            profile: None,
            status: ConversationStatus::default(),
            greeting_turns: Vec::new(),
            episode: None,
            pending_knowledge: None,
            surfaced: Vec::new(),
            interaction_turns: 0,
            events_applied: 0,
        }
    }
}

impl SessionState {
    pub fn is_open(&self) -> bool {
        !matches!(self.phase, Phase::LibraryBrowse | Phase::Completed)
    }

    pub fn at_last_page(&self) -> bool {
        self.page_count > 0 && self.pages_shown == self.page_count
    }

    fn interaction_enabled(&self) -> bool {
        self.mode.is_some_and(|m| m.interaction_enabled)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind} is not allowed in phase {phase}: {reason}")]
pub struct TransitionError {
    pub phase: Phase,
    pub kind: &'static str,
    pub reason: String,
}

/// Validate `event` against `state` and return the next state.
pub fn advance(state: &SessionState, event: &EventPayload) -> Result<SessionState, TransitionError> {
    let fail = |reason: &str| TransitionError { phase: state.phase, kind: event.kind(), reason: reason.to_string() };
    let mut next = state.clone();
    next.events_applied += 1;

    if let EventPayload::Warning { .. } = event {
        if state.phase == Phase::LibraryBrowse {
            return Err(fail("the session has not started"));
        }
        return Ok(next);
    }
    if state.phase == Phase::Completed {
        return Err(fail("the session is completed"));
    }

    match event {
        EventPayload::SessionStarted { session_id, child_id, book_id, book_title, page_count, greeting, profile } => {
            if state.phase != Phase::LibraryBrowse {
                return Err(fail("the session already started"));
            }
            if *page_count == 0 {
                return Err(fail("the book has no pages"));
            }
            if !greeting && profile.is_none() {
                return Err(fail("skipping the greeting needs a stored profile"));
            }
            next.session_id = session_id.clone();
            next.child_id = child_id.clone();
            next.book_id = book_id.clone();
            next.book_title = book_title.clone();
            next.page_count = *page_count;
            next.profile = profile.clone();
            next.phase = if *greeting { Phase::Greeting } else { Phase::ModeSetup };
        }
        EventPayload::GreetingTurn { speaker, text, .. } => {
            if state.phase != Phase::Greeting {
                return Err(fail("greeting turns belong to the greeting"));
            }
            next.greeting_turns.push(Turn { speaker: *speaker, text: text.clone() });
        }
        EventPayload::ProfileCaptured { profile, .. } => {
            if state.phase != Phase::Greeting {
                return Err(fail("the profile is captured at the end of the greeting"));
            }
            next.profile = Some(profile.clone());
            next.phase = Phase::ModeSetup;
        }
        EventPayload::ModeSet { mode } => {
            if !matches!(state.phase, Phase::ModeSetup | Phase::Reading) {
                return Err(fail("the mode can be set during setup or reading"));
            }
            mode.validate().map_err(|e| fail(&e))?;
            if state.phase == Phase::Reading && state.episode.is_some() {
                return Err(fail("an interaction is in progress"));
            }
            next.mode = Some(*mode);
            next.phase = Phase::Reading;
        }
        EventPayload::PageShown { page_index, .. } => {
            if state.phase != Phase::Reading || state.episode.is_some() {
                return Err(fail("pages are shown while reading"));
            }
            if *page_index != state.pages_shown || *page_index >= state.page_count {
                return Err(fail("pages are shown in order, once each"));
            }
            next.page_index = *page_index;
            next.pages_shown += 1;
            next.pending_knowledge = None;
        }
        EventPayload::KnowledgeSurfaced { page_index, entry_id, statement, grade, keyword, similarity } => {
            if state.phase != Phase::Reading || state.episode.is_some() {
                return Err(fail("knowledge is surfaced when an interaction begins"));
            }
            if !state.interaction_enabled() {
                return Err(fail("interaction is disabled"));
            }
            next.pending_knowledge = Some(MatchedKnowledge {
                entry_id: entry_id.clone(),
                statement: statement.clone(),
                grade: *grade,
                keyword: keyword.clone(),
                similarity: *similarity,
            });
            if let Some(p) = page_index {
                if *p >= state.pages_shown {
                    return Err(fail("knowledge for a page not yet shown"));
                }
            }
            if !next.surfaced.contains(entry_id) {
                next.surfaced.push(entry_id.clone());
            }
        }
        EventPayload::InteractionTurn { speaker, text, question_type, follow_up_expected, child_initiated, .. } => {
            if !state.interaction_enabled() {
                return Err(fail("interaction is disabled"));
            }
            let turn = Turn { speaker: *speaker, text: text.clone() };
            match (state.phase, *speaker) {
                (Phase::Reading, Speaker::Assistant) => {
                    if state.episode.is_some() || state.pages_shown == 0 {
                        return Err(fail("an interaction starts after a page"));
                    }
                    let question_type = question_type.ok_or_else(|| fail("an opening turn names its question type"))?;
                    let knowledge = next.pending_knowledge.take();
                    if (question_type == QuestionType::KnowledgeExtending) != knowledge.is_some() {
                        return Err(fail("knowledge-extending turns go with surfaced knowledge"));
                    }
                    if *follow_up_expected {
                        next.episode = Some(Episode {
                            kind: EpisodeKind::Page,
                            page_index: Some(state.page_index),
                            question_type,
                            knowledge,
                            turns: vec![turn],
                        });
                        next.phase = Phase::Interaction;
                    }
                }
                (Phase::Reading, Speaker::Child) => {
                    if !child_initiated || state.episode.is_some() || state.pages_shown == 0 {
                        return Err(fail("a child turn while reading must be child-initiated"));
                    }
                    next.pending_knowledge = None;
                    next.episode = Some(Episode {
                        kind: EpisodeKind::ChildInitiated,
                        page_index: Some(state.page_index),
                        question_type: QuestionType::StoryBased,
                        knowledge: None,
                        turns: vec![turn],
                    });
                    next.phase = Phase::Interaction;
                }
                (Phase::Interaction, Speaker::Assistant) => {
                    let ep = next.episode.as_mut().ok_or_else(|| fail("no interaction in progress"))?;
                    if !ep.awaiting_assistant() {
                        return Err(fail("the assistant already spoke"));
                    }
                    ep.turns.push(turn);
                    if !follow_up_expected {
                        next.episode = None;
                        next.phase = Phase::Reading;
                    }
                }
                (Phase::Interaction, Speaker::Child) => {
                    let ep = next.episode.as_mut().ok_or_else(|| fail("no interaction in progress"))?;
                    if !ep.awaiting_child() {
                        return Err(fail("the assistant has not spoken yet"));
                    }
                    ep.turns.push(turn);
                }
                _ => return Err(fail("interaction turns belong to reading")),
            }
            next.interaction_turns += 1;
        }
        EventPayload::AnswerAssessed { status, .. } => {
            if !matches!(state.phase, Phase::Interaction | Phase::Summary)
                || !state.episode.as_ref().is_some_and(Episode::awaiting_assistant)
            {
                return Err(fail("only a child answer can be assessed"));
            }
            next.status = status.clone();
        }
        EventPayload::SummaryTurn { speaker, text, follow_up_expected, .. } => {
            let turn = Turn { speaker: *speaker, text: text.clone() };
            match (state.phase, *speaker) {
                (Phase::Reading, Speaker::Assistant) => {
                    if !state.at_last_page() || state.episode.is_some() {
                        return Err(fail("the summary follows the last page"));
                    }
                    next.pending_knowledge = None;
                    next.phase = Phase::Summary;
                    if *follow_up_expected {
                        next.episode = Some(Episode {
                            kind: EpisodeKind::StoryEnd,
                            page_index: None,
                            question_type: QuestionType::StoryBased,
                            knowledge: None,
                            turns: vec![turn],
                        });
                    }
                }
                (Phase::Summary, Speaker::Assistant) => {
                    let ep = next.episode.as_mut().ok_or_else(|| fail("the summary talk is over"))?;
                    if !ep.awaiting_assistant() {
                        return Err(fail("the assistant already spoke"));
                    }
                    ep.turns.push(turn);
                    if !follow_up_expected {
                        next.episode = None;
                    }
                }
                (Phase::Summary, Speaker::Child) => {
                    let ep = next.episode.as_mut().ok_or_else(|| fail("the summary talk is over"))?;
                    if !ep.awaiting_child() {
                        return Err(fail("the assistant has not spoken yet"));
                    }
                    ep.turns.push(turn);
                }
                _ => return Err(fail("summary turns follow the last page")),
            }
        }
        EventPayload::SessionCompleted { .. } => {
            if state.phase != Phase::Summary {
                return Err(fail("a session completes after the summary"));
            }
            next.episode = None;
            next.phase = Phase::Completed;
        }
        EventPayload::Warning { .. } => unreachable!("handled above"),
    }
    Ok(next)
}

/// Fold a log into its state.
pub fn replay<'a, I>(events: I) -> Result<SessionState, TransitionError>
where
    I: IntoIterator<Item = &'a EventPayload>,
{
    events.into_iter().try_fold(SessionState::default(), |s, e| advance(&s, e))
}

fn moves_label(moves: &[DialogueMove]) -> String {
    if moves.is_empty() {
        String::new()
    } else {
        format!(" [{}]", moves.iter().map(|m| m.tag.identifier()).collect::<Vec<_>>().join(", "))
    }
}

/// Human-readable transcript of a session log, free of timestamps so it can
/// be compared byte for byte.
pub fn render_transcript(events: &[SessionEvent]) -> String {
    let mut out = String::new();
    for e in events {
        match &e.payload {
            EventPayload::SessionStarted { session_id, child_id, book_id, book_title, page_count, greeting, .. } => {
                let _ = writeln!(
                    out,
                    "# session {session_id}: child {child_id}, book {book_id} \"{book_title}\" ({page_count} pages)"
                );
                if *greeting {
                    let _ = writeln!(out, "== greeting");
                } else {
                    let _ = writeln!(out, "== returning child, greeting skipped");
                }
            }
            EventPayload::GreetingTurn { speaker, text, moves, .. } => {
                let _ = writeln!(out, "{}{}: {}", speaker.label(), moves_label(moves), text);
            }
            EventPayload::ProfileCaptured { profile, warnings } => {
                let _ = writeln!(
                    out,
                    "== profile: name {}, age {}, interests [{}]",
                    profile.nickname.as_deref().unwrap_or("?"),
                    profile.age_years.map_or("?".to_string(), |a| a.to_string()),
                    profile.interests.join("; ")
                );
                for w in warnings {
                    let _ = writeln!(out, "(profile warning) {w}");
                }
            }
            EventPayload::ModeSet { mode } => {
                let _ = writeln!(out, "== mode: {}", mode.describe());
            }
            EventPayload::PageShown { page_index, .. } => {
                let _ = writeln!(out, "== page {}", page_index + 1);
            }
            EventPayload::KnowledgeSurfaced { entry_id, statement, grade, keyword, similarity, .. } => {
                let _ = writeln!(
                    out,
                    "(knowledge) {entry_id} [{}] via \"{keyword}\" ({similarity:.3}): {statement}",
                    grade.display_name()
                );
            }
            EventPayload::InteractionTurn { speaker, text, moves, child_initiated, .. } => {
                let asked = if *child_initiated { " (child-initiated)" } else { "" };
                let _ = writeln!(out, "{}{}{}: {}", speaker.label(), asked, moves_label(moves), text);
            }
            EventPayload::AnswerAssessed { judgment, topic, .. } => {
                let j = serde_json::to_value(judgment).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
                let _ = writeln!(out, "(assessed) {j}: {topic}");
            }
            EventPayload::SummaryTurn { speaker, text, moves, .. } => {
                let _ = writeln!(out, "{} (summary){}: {}", speaker.label(), moves_label(moves), text);
            }
            EventPayload::SessionCompleted { pages_shown } => {
                let _ = writeln!(out, "== completed after {pages_shown} pages");
            }
            EventPayload::Warning { code, message } => {
                let _ = writeln!(out, "(warning {code}) {message}");
            }
        }
    }
    out
}

/// An incorrect or unsure answer followed by a turn that neither
/// scaffolds nor carries a logged contract violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaffoldingGap {
    pub session_id: String,
    pub assessed_seq: u64,
}

pub fn audit_scaffolding(events: &[SessionEvent]) -> Vec<ScaffoldingGap> {
    let mut gaps = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let EventPayload::AnswerAssessed { judgment, .. } = &e.payload else { continue };
        if !judgment.needs_scaffolding() {
            continue;
        }
        let mut covered = false;
        for later in &events[i + 1..] {
            match &later.payload {
                EventPayload::Warning { code, .. } if code == CONTRACT_VIOLATION => {
                    covered = true;
                    break;
                }
                EventPayload::InteractionTurn { speaker: Speaker::Assistant, moves, .. }
                | EventPayload::SummaryTurn { speaker: Speaker::Assistant, moves, .. } => {
                    covered = moves.iter().any(|m| m.tag == MoveTag::Scaffolding);
                    break;
                }
                _ => {}
            }
        }
        if !covered {
            gaps.push(ScaffoldingGap { session_id: e.session_id.clone(), assessed_seq: e.seq });
        }
    }
    gaps
}
