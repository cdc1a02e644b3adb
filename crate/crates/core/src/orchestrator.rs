//! Runs reading sessions: turns child input and page signals into events,
//! calling retrieval, the dialogue engine and narration along the way.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::assets::AssetStore;
use crate::book::{Book, BookError, Library};
use crate::clock::Clock;
use crate::dialogue::{
    generate_assistant_turn, plan_question_type, AssistantTurn, DialogueError, QuestionType, SummaryCache, TurnRole,
};
use crate::learner::{parse_self_introduction, update_status_with, ChildProfile, EngagementConfig};
use crate::persistence::{EventLog, LogError};
use crate::prompt::{
    build_dialogue_prompt, build_greeting_prompt, DialogueInputs, EpisodeScope, MatchedKnowledge, MoveTag, Speaker,
};
use crate::providers::{ChatProvider, SpeechSynthesizer};
use crate::retrieval::{RetrievalConfig, Retriever};
use crate::session::{
    advance, replay, should_interact, EpisodeKind, EventPayload, Phase, ReadingMode, SessionEvent, SessionState,
    TransitionError,
};

pub const WARN_NARRATION: &str = "narration_unavailable";
pub const WARN_RETRIEVAL: &str = "retrieval_failed";
pub const WARN_EPISODE_SKIPPED: &str = "episode_skipped";
pub const WARN_ASSISTANT: &str = "assistant_unavailable";
pub const WARN_PROFILE: &str = "profile_extraction";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    pub retrieval: RetrievalConfig,
    pub max_greeting_turns: usize,
    pub engagement: EngagementConfig,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self { retrieval: RetrievalConfig::default(), max_greeting_turns: 6, engagement: EngagementConfig::default() }
    }
}

/// Input to a running session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    ChildText(String),
    NextPage,
    SetMode(ReadingMode),
    /// Ask again for an assistant turn that failed to arrive.
    Retry,
    /// End the closing conversation early.
    Finish,
}

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error("session `{0}` not found")]
    SessionNotFound(String),
    #[error("child `{child}` already has an open session `{session}`")]
    Conflict { child: String, session: String },
    #[error(transparent)]
    Transition(#[from] TransitionError),
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Log(#[from] LogError),
}

impl OrchestratorError {
    pub fn is_retryable(&self) -> bool {
        match self {
            OrchestratorError::Dialogue(e) => e.is_retryable(),
            OrchestratorError::Log(e) => e.is_retryable(),
            _ => false,
        }
    }
}

/// State after an input, plus the events it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub state: SessionState,
    pub events: Vec<SessionEvent>,
}

pub struct Orchestrator {
    library: Arc<Library>,
    retriever: Arc<Retriever>,
    chat: Arc<dyn ChatProvider>,
    speech: Option<Arc<dyn SpeechSynthesizer>>,
    assets: Arc<AssetStore>,
    log: Arc<EventLog>,
    clock: Arc<dyn Clock>,
    summaries: SummaryCache,
    config: OrchestratorConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionState>>>>,
    open_by_child: Mutex<HashMap<String, String>>,
}

pub struct OrchestratorParts {
    pub library: Arc<Library>,
    pub retriever: Arc<Retriever>,
    pub chat: Arc<dyn ChatProvider>,
    pub speech: Option<Arc<dyn SpeechSynthesizer>>,
    pub assets: Arc<AssetStore>,
    pub log: Arc<EventLog>,
    pub clock: Arc<dyn Clock>,
    pub config: OrchestratorConfig,
}

struct Ctx<'a> {
    state: &'a mut SessionState,
    events: Vec<SessionEvent>,
}

fn valid_child_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl Orchestrator {
    /// Build an orchestrator and rebuild every session already in the log.
    pub fn new(parts: OrchestratorParts) -> Result<Self, OrchestratorError> {
        let orch = Self {
            library: parts.library,
            retriever: parts.retriever,
            chat: parts.chat,
            speech: parts.speech,
            assets: parts.assets,
            log: parts.log,
            clock: parts.clock,
            summaries: SummaryCache::new(),
            config: parts.config,
            sessions: RwLock::new(HashMap::new()),
            open_by_child: Mutex::new(HashMap::new()),
        };
        for id in orch.log.session_ids() {
            let events = orch.log.stream(&id);
            let state = replay(events.iter().map(|e| &e.payload))?;
            if state.is_open() {
                orch.open_by_child.lock().insert(state.child_id.clone(), id.clone());
            }
            orch.sessions.write().insert(id, Arc::new(Mutex::new(state)));
        }
        Ok(orch)
    }

    pub fn library(&self) -> &Arc<Library> {
        &self.library
    }

    pub fn retriever(&self) -> &Arc<Retriever> {
        &self.retriever
    }

    pub fn log(&self) -> &Arc<EventLog> {
        &self.log
    }

    pub fn assets(&self) -> &Arc<AssetStore> {
        &self.assets
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    pub fn now(&self) -> crate::clock::Timestamp {
        self.clock.now()
    }

    pub fn summaries(&self) -> &SummaryCache {
        &self.summaries
    }

    pub fn session(&self, session_id: &str) -> Option<SessionState> {
        self.sessions.read().get(session_id).map(|s| s.lock().clone())
    }

    pub fn open_session_for(&self, child_id: &str) -> Option<String> {
        self.open_by_child.lock().get(child_id).cloned()
    }

    /// Latest profile captured for a child in any session.
    pub fn stored_profile(&self, child_id: &str) -> Option<ChildProfile> {
        let mut found = None;
        for stream in self.log.child_streams(child_id) {
            for e in stream {
                match e.payload {
                    EventPayload::ProfileCaptured { profile, .. } => found = Some(profile),
                    EventPayload::SessionStarted { profile: Some(profile), .. } => found = Some(profile),
                    _ => {}
                }
            }
        }
        found
    }

    fn emit(&self, ctx: &mut Ctx<'_>, payload: EventPayload) -> Result<(), OrchestratorError> {
        let next = advance(ctx.state, &payload)?;
        let event = self.log.append(&next.session_id, &next.child_id, payload, self.clock.now())?;
        *ctx.state = next;
        ctx.events.push(event);
        Ok(())
    }

    fn warn(&self, ctx: &mut Ctx<'_>, code: &str, message: impl Into<String>) -> Result<(), OrchestratorError> {
        let message = message.into();
        tracing::warn!(session = %ctx.state.session_id, code, %message);
        self.emit(ctx, EventPayload::warning(code, message))
    }

    fn narrate(&self, ctx: &mut Ctx<'_>, text: &str) -> Result<Option<String>, OrchestratorError> {
        let enabled = ctx.state.mode.unwrap_or_default().narration_enabled;
        let Some(speech) = self.speech.as_ref().filter(|_| enabled && !text.trim().is_empty()) else {
            return Ok(None);
        };
        match speech.synthesize(text) {
            Ok(clip) => match self.assets.put(&clip.media_type, &clip.bytes) {
                Ok(key) => Ok(Some(key)),
                Err(e) => {
                    self.warn(ctx, WARN_NARRATION, format!("could not store audio: {e}"))?;
                    Ok(None)
                }
            },
            Err(e) => {
                self.warn(ctx, WARN_NARRATION, format!("speech synthesis failed: {e}"))?;
                Ok(None)
            }
        }
    }

    fn emit_turn_warnings(&self, ctx: &mut Ctx<'_>, turn: &AssistantTurn) -> Result<(), OrchestratorError> {
        for w in &turn.warnings {
            self.warn(ctx, &w.code, w.message.clone())?;
        }
        Ok(())
    }

    pub fn start_session(&self, child_id: &str, book_id: &str, regreet: bool) -> Result<Outcome, OrchestratorError> {
        if !valid_child_id(child_id) {
            return Err(OrchestratorError::Invalid {
                field: "child_id",
                reason: "use 1-64 characters from [A-Za-z0-9_-]".into(),
            });
        }
        let book = self.library.confirmed(book_id)?;
        let mut open = self.open_by_child.lock();
        if let Some(session) = open.get(child_id) {
            return Err(OrchestratorError::Conflict { child: child_id.to_string(), session: session.clone() });
        }
        let stored = self.stored_profile(child_id);
        let session_id = format!("{child_id}-{}", self.log.sessions_for_child(child_id).len() + 1);
        let greeting = regreet || stored.is_none();
        let mut state = SessionState::default();
        let mut ctx = Ctx { state: &mut state, events: Vec::new() };
        self.emit(
            &mut ctx,
            EventPayload::SessionStarted {
                session_id: session_id.clone(),
                child_id: child_id.to_string(),
                book_id: book.id.clone(),
                book_title: book.title.clone(),
                page_count: book.page_count(),
                greeting,
                profile: if greeting { None } else { stored.clone() },
            },
        )?;
        open.insert(child_id.to_string(), session_id.clone());
        drop(open);
        let result = if greeting { self.greeting_step(&mut ctx, stored.as_ref()) } else { Ok(()) };
        let events = ctx.events;
        self.sessions.write().insert(session_id, Arc::new(Mutex::new(state.clone())));
        result?;
        Ok(Outcome { state, events })
    }

    /// Apply one input to a session. Inputs for one session are serialized.
    pub fn handle(&self, session_id: &str, input: Input) -> Result<Outcome, OrchestratorError> {
        let (events, result) = self.handle_with_events(session_id, input);
        result.map(|state| Outcome { state, events })
    }

    /// Like `handle`, but also returns the events logged before a failure.
    pub fn handle_with_events(
        &self,
        session_id: &str,
        input: Input,
    ) -> (Vec<SessionEvent>, Result<SessionState, OrchestratorError>) {
        let Some(slot) = self.sessions.read().get(session_id).cloned() else {
            return (Vec::new(), Err(OrchestratorError::SessionNotFound(session_id.to_string())));
        };
        let mut guard = slot.lock();
        let mut working = guard.clone();
        let mut ctx = Ctx { state: &mut working, events: Vec::new() };
        let result = self.dispatch(&mut ctx, input);
        let events = ctx.events;
        // Events already logged stay applied even when a later step fails.
        *guard = working.clone();
        if guard.phase == Phase::Completed {
            let mut open = self.open_by_child.lock();
            if open.get(&guard.child_id).is_some_and(|s| s == session_id) {
                open.remove(&guard.child_id);
            }
        }
        (events, result.map(|()| working))
    }

    fn refuse(state: &SessionState, kind: &'static str, reason: &str) -> OrchestratorError {
        OrchestratorError::Transition(TransitionError { phase: state.phase, kind, reason: reason.to_string() })
    }

    fn dispatch(&self, ctx: &mut Ctx<'_>, input: Input) -> Result<(), OrchestratorError> {
        match input {
            Input::SetMode(mode) => {
                mode.validate().map_err(|reason| OrchestratorError::Invalid { field: "mode", reason })?;
                let was_setup = ctx.state.phase == Phase::ModeSetup;
                self.emit(ctx, EventPayload::ModeSet { mode })?;
                if was_setup {
                    self.show_next_page(ctx)?;
                }
                Ok(())
            }
            Input::NextPage => {
                if ctx.state.phase != Phase::Reading || ctx.state.episode.is_some() {
                    return Err(Self::refuse(ctx.state, "next_page", "pages turn while reading, between interactions"));
                }
                if ctx.state.pages_shown < ctx.state.page_count {
                    self.show_next_page(ctx)
                } else {
                    self.start_summary(ctx)
                }
            }
            Input::ChildText(text) => {
                let text = text.trim().to_string();
                if text.is_empty() {
                    return Err(OrchestratorError::Invalid { field: "text", reason: "empty input".into() });
                }
                self.child_text(ctx, text)
            }
            Input::Retry => match ctx.state.phase {
                Phase::Greeting if ctx.state.greeting_turns.last().is_none_or(|t| t.speaker == Speaker::Child) => {
                    let stored = self.stored_profile(&ctx.state.child_id);
                    self.greeting_step(ctx, stored.as_ref())
                }
                Phase::Interaction | Phase::Summary
                    if ctx.state.episode.as_ref().is_some_and(|e| e.awaiting_assistant()) =>
                {
                    self.respond(ctx)
                }
                _ => Err(Self::refuse(ctx.state, "retry", "no assistant turn is pending")),
            },
            Input::Finish => {
                if ctx.state.phase != Phase::Summary {
                    return Err(Self::refuse(ctx.state, "finish", "the session ends after the summary talk"));
                }
                let pages_shown = ctx.state.pages_shown;
                self.emit(ctx, EventPayload::SessionCompleted { pages_shown })
            }
        }
    }

    fn child_text(&self, ctx: &mut Ctx<'_>, text: String) -> Result<(), OrchestratorError> {
        match ctx.state.phase {
            Phase::Greeting => {
                self.emit(
                    ctx,
                    EventPayload::GreetingTurn { speaker: Speaker::Child, text, moves: vec![], audio_key: None },
                )?;
                let stored = self.stored_profile(&ctx.state.child_id);
                self.greeting_step(ctx, stored.as_ref())
            }
            Phase::Reading | Phase::Interaction => {
                let initiated = ctx.state.phase == Phase::Reading;
                self.emit(
                    ctx,
                    EventPayload::InteractionTurn {
                        speaker: Speaker::Child,
                        text,
                        moves: vec![],
                        question_type: None,
                        follow_up_expected: false,
                        child_initiated: initiated,
                        audio_key: None,
                    },
                )?;
                self.respond(ctx)
            }
            Phase::Summary => {
                self.emit(
                    ctx,
                    EventPayload::SummaryTurn {
                        speaker: Speaker::Child,
                        text,
                        moves: vec![],
                        follow_up_expected: false,
                        audio_key: None,
                    },
                )?;
                self.respond(ctx)
            }
            _ => Err(Self::refuse(ctx.state, "child_text", "no conversation is expecting input")),
        }
    }

    fn greeting_step(&self, ctx: &mut Ctx<'_>, stored: Option<&ChildProfile>) -> Result<(), OrchestratorError> {
        let partial = stored.cloned().unwrap_or_default();
        let prompt = build_greeting_prompt(&partial, &ctx.state.greeting_turns);
        let turn = match generate_assistant_turn(&prompt, TurnRole::Greeting, self.chat.as_ref()) {
            Ok(t) => t,
            Err(e) => {
                self.warn(ctx, WARN_ASSISTANT, format!("greeting turn failed: {e}"))?;
                return Err(e.into());
            }
        };
        self.emit_turn_warnings(ctx, &turn)?;
        let audio_key = self.narrate(ctx, &turn.clean_text)?;
        let introduced = turn.has(MoveTag::IntroductionOfReadingActivity);
        self.emit(
            ctx,
            EventPayload::GreetingTurn {
                speaker: Speaker::Assistant,
                text: turn.clean_text,
                moves: turn.moves,
                audio_key,
            },
        )?;
        let asked = ctx.state.greeting_turns.iter().filter(|t| t.speaker == Speaker::Assistant).count();
        if introduced || asked >= self.config.max_greeting_turns {
            self.capture_profile(ctx, stored)?;
        }
        Ok(())
    }

    fn capture_profile(&self, ctx: &mut Ctx<'_>, stored: Option<&ChildProfile>) -> Result<(), OrchestratorError> {
        let (mut profile, warnings) = match parse_self_introduction(&ctx.state.greeting_turns, self.chat.as_ref()) {
            Ok(x) => (x.profile, x.warnings),
            Err(e) => (ChildProfile::default(), vec![e.to_string()]),
        };
        if let Some(old) = stored {
            profile.nickname = profile.nickname.or_else(|| old.nickname.clone());
            profile.age_years = profile.age_years.or(old.age_years);
            profile.favorite_story_or_character =
                profile.favorite_story_or_character.or_else(|| old.favorite_story_or_character.clone());
            profile.language_style = profile.language_style.or_else(|| old.language_style.clone());
            if profile.interests.is_empty() {
                profile.interests = old.interests.clone();
            }
        }
        self.emit(ctx, EventPayload::ProfileCaptured { profile, warnings })
    }

    fn book(&self, ctx: &Ctx<'_>) -> Result<Book, OrchestratorError> {
        Ok(self.library.confirmed(&ctx.state.book_id)?)
    }

    fn summary_text(&self, book: &Book) -> String {
        if let Some(s) = &book.summary {
            return s.text.clone();
        }
        match self.summaries.get_or_summarize(book, self.chat.as_ref()) {
            Ok(s) => s.text.clone(),
            Err(e) => {
                tracing::warn!(book = %book.id, error = %e, "no summary available");
                String::new()
            }
        }
    }

    fn show_next_page(&self, ctx: &mut Ctx<'_>) -> Result<(), OrchestratorError> {
        let book = self.book(ctx)?;
        let index = ctx.state.pages_shown;
        let page = book.pages.get(index).ok_or_else(|| Self::refuse(ctx.state, "next_page", "no more pages"))?;
        let audio_key = self.narrate(ctx, &page.text)?;
        self.emit(ctx, EventPayload::PageShown { page_index: index, audio_key })?;
        let mode = ctx.state.mode.unwrap_or_default();
        if should_interact(index, &mode, index + 1 == book.page_count()) {
            self.start_page_episode(ctx, &book, index)?;
        }
        Ok(())
    }

    fn start_page_episode(&self, ctx: &mut Ctx<'_>, book: &Book, index: usize) -> Result<(), OrchestratorError> {
        let text = book.pages[index].text.clone();
        if text.trim().is_empty() {
            return self.warn(ctx, WARN_EPISODE_SKIPPED, format!("page {} has no text", index + 1));
        }
        let profile = ctx.state.profile.clone().unwrap_or_default();
        let mode = ctx.state.mode.unwrap_or_default();
        let matches = match self.retriever.match_section(
            &format!("{}#{}", book.id, index),
            &text,
            profile.grade_cap(),
            &self.config.retrieval,
        ) {
            Ok(m) => m,
            Err(e) => {
                self.warn(ctx, WARN_RETRIEVAL, e.to_string())?;
                Vec::new()
            }
        };
        let question_type = plan_question_type(&matches, &mode, &ctx.state.status);
        let matched = match question_type {
            QuestionType::KnowledgeExtending => matches.first().and_then(|m| {
                self.retriever.graph().get(&m.entry_id).map(|entry| MatchedKnowledge {
                    entry_id: m.entry_id.clone(),
                    statement: entry.statement.clone(),
                    grade: m.grade,
                    keyword: m.keyword.surface.clone(),
                    similarity: m.similarity,
                })
            }),
            QuestionType::StoryBased => None,
        };
        let question_type = if matched.is_some() { question_type } else { QuestionType::StoryBased };
        let summary = self.summary_text(book);
        let prompt = build_dialogue_prompt(&DialogueInputs {
            scope: EpisodeScope::Page { index, of: book.page_count() },
            story_section: &text,
            profile: &profile,
            summary: &summary,
            status: &ctx.state.status,
            matched: matched.as_ref(),
            question_type,
            history: &[],
        })
        .map_err(DialogueError::from)?;
        let turn = match generate_assistant_turn(&prompt, TurnRole::Opening, self.chat.as_ref()) {
            Ok(t) => t,
            Err(e) => {
                return self.warn(ctx, WARN_EPISODE_SKIPPED, format!("no opening turn for page {}: {e}", index + 1));
            }
        };
        if let Some(m) = &matched {
            self.emit(
                ctx,
                EventPayload::KnowledgeSurfaced {
                    page_index: Some(index),
                    entry_id: m.entry_id.clone(),
                    statement: m.statement.clone(),
                    grade: m.grade,
                    keyword: m.keyword.clone(),
                    similarity: m.similarity,
                },
            )?;
        }
        self.emit_turn_warnings(ctx, &turn)?;
        let audio_key = self.narrate(ctx, &turn.clean_text)?;
        self.emit(
            ctx,
            EventPayload::InteractionTurn {
                speaker: Speaker::Assistant,
                text: turn.clean_text,
                moves: turn.moves,
                question_type: Some(question_type),
                follow_up_expected: turn.follow_up_expected,
                child_initiated: false,
                audio_key,
            },
        )
    }

    fn start_summary(&self, ctx: &mut Ctx<'_>) -> Result<(), OrchestratorError> {
        let book = self.book(ctx)?;
        let summary = self.summary_text(&book);
        let interaction = ctx.state.mode.is_some_and(|m| m.interaction_enabled);
        if !interaction {
            let text = if summary.is_empty() {
                "We finished the story!".to_string()
            } else {
                format!("We finished the story! {summary}")
            };
            let audio_key = self.narrate(ctx, &text)?;
            self.emit(
                ctx,
                EventPayload::SummaryTurn {
                    speaker: Speaker::Assistant,
                    text,
                    moves: vec![],
                    follow_up_expected: false,
                    audio_key,
                },
            )?;
            let pages_shown = ctx.state.pages_shown;
            return self.emit(ctx, EventPayload::SessionCompleted { pages_shown });
        }
        let profile = ctx.state.profile.clone().unwrap_or_default();
        let prompt = build_dialogue_prompt(&DialogueInputs {
            scope: EpisodeScope::StoryEnd,
            story_section: "",
            profile: &profile,
            summary: &summary,
            status: &ctx.state.status,
            matched: None,
            question_type: QuestionType::StoryBased,
            history: &[],
        })
        .map_err(DialogueError::from)?;
        let turn = match generate_assistant_turn(&prompt, TurnRole::Opening, self.chat.as_ref()) {
            Ok(t) => t,
            Err(e) => {
                self.warn(ctx, WARN_ASSISTANT, format!("summary talk could not start: {e}"))?;
                return Err(e.into());
            }
        };
        self.emit_turn_warnings(ctx, &turn)?;
        let audio_key = self.narrate(ctx, &turn.clean_text)?;
        let follow_up = turn.follow_up_expected;
        self.emit(
            ctx,
            EventPayload::SummaryTurn {
                speaker: Speaker::Assistant,
                text: turn.clean_text,
                moves: turn.moves,
                follow_up_expected: follow_up,
                audio_key,
            },
        )?;
        if !follow_up {
            let pages_shown = ctx.state.pages_shown;
            self.emit(ctx, EventPayload::SessionCompleted { pages_shown })?;
        }
        Ok(())
    }

    /// Answer the child's latest turn in the current episode.
    fn respond(&self, ctx: &mut Ctx<'_>) -> Result<(), OrchestratorError> {
        let episode = ctx
            .state
            .episode
            .clone()
            .ok_or_else(|| Self::refuse(ctx.state, "respond", "no conversation in progress"))?;
        let book = self.book(ctx)?;
        let profile = ctx.state.profile.clone().unwrap_or_default();
        let summary = self.summary_text(&book);
        let (scope, section) = match (episode.kind, episode.page_index) {
            (EpisodeKind::StoryEnd, _) | (_, None) => (EpisodeScope::StoryEnd, String::new()),
            (_, Some(i)) => (
                EpisodeScope::Page { index: i, of: book.page_count() },
                book.pages.get(i).map(|p| p.text.clone()).unwrap_or_default(),
            ),
        };
        let prompt = build_dialogue_prompt(&DialogueInputs {
            scope,
            story_section: &section,
            profile: &profile,
            summary: &summary,
            status: &ctx.state.status,
            matched: episode.knowledge.as_ref(),
            question_type: episode.question_type,
            history: &episode.turns,
        })
        .map_err(DialogueError::from)?;
        let turn = match generate_assistant_turn(&prompt, TurnRole::AnswerResponse, self.chat.as_ref()) {
            Ok(t) => t,
            Err(e) => {
                self.warn(ctx, WARN_ASSISTANT, format!("reply failed, retry to ask again: {e}"))?;
                return Err(e.into());
            }
        };
        let child_text = episode
            .turns
            .iter()
            .rev()
            .find(|t| t.speaker == Speaker::Child)
            .map(|t| t.text.clone())
            .unwrap_or_default();
        let status = update_status_with(&self.config.engagement, &ctx.state.status, &child_text, &turn.assessment);
        self.emit(
            ctx,
            EventPayload::AnswerAssessed {
                judgment: turn.assessment.answer_judgment,
                topic: turn.assessment.topic.clone(),
                status,
            },
        )?;
        self.emit_turn_warnings(ctx, &turn)?;
        let audio_key = self.narrate(ctx, &turn.clean_text)?;
        if ctx.state.phase == Phase::Summary {
            self.emit(
                ctx,
                EventPayload::SummaryTurn {
                    speaker: Speaker::Assistant,
                    text: turn.clean_text,
                    moves: turn.moves,
                    follow_up_expected: turn.follow_up_expected,
                    audio_key,
                },
            )?;
            if !turn.follow_up_expected {
                let pages_shown = ctx.state.pages_shown;
                self.emit(ctx, EventPayload::SessionCompleted { pages_shown })?;
            }
            Ok(())
        } else {
            self.emit(
                ctx,
                EventPayload::InteractionTurn {
                    speaker: Speaker::Assistant,
                    text: turn.clean_text,
                    moves: turn.moves,
                    question_type: None,
                    follow_up_expected: turn.follow_up_expected,
                    child_initiated: false,
                    audio_key,
                },
            )
        }
    }
}
