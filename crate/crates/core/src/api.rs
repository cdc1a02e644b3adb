//! HTTP boundary, independent of any web framework: `Service::dispatch`
//! maps an `ApiRequest` to an `ApiResponse`. `server` adapts it to axum.

use std::collections::HashMap;
use std::sync::Arc;

use base64::Engine as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::book::{ingest_photos, parse_bundle, preview_matched_knowledge, BookError, BookStatus, ImageUpload, LibraryEntry};
use crate::dashboard::{compute_dashboard, DashboardOptions, KnowledgeRule};
use crate::grade::GradeLevel;
use crate::learner::grade_for_age;
use crate::orchestrator::{Input, Orchestrator, OrchestratorError};
use crate::persistence::LogError;
use crate::prompt::{DialogueMove, MatchedKnowledge, Speaker};
use crate::providers::OcrEngine;
use crate::session::{advance, render_transcript, EventPayload, Phase, ReadingMode, SessionEvent, SessionState};

pub const API_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
    Put,
    Patch,
    Delete,
    Other,
}

impl Method {
    pub fn parse(s: &str) -> Self {
        match s.to_ascii_uppercase().as_str() {
            "GET" | "HEAD" => Method::Get,
            "POST" => Method::Post,
            "PUT" => Method::Put,
            "PATCH" => Method::Patch,
            "DELETE" => Method::Delete,
            _ => Method::Other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ApiRequest {
    pub method: Method,
    pub path: String,
    pub query: String,
    pub body: Vec<u8>,
}

impl ApiRequest {
    pub fn new(method: Method, target: &str) -> Self {
        let (path, query) = target.split_once('?').unwrap_or((target, ""));
        Self { method, path: path.to_string(), query: query.to_string(), body: Vec::new() }
    }

    pub fn get(target: &str) -> Self {
        Self::new(Method::Get, target)
    }

    pub fn with_json(method: Method, target: &str, body: &Value) -> Self {
        Self { body: serde_json::to_vec(body).expect("json value serializes"), ..Self::new(method, target) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApiBody {
    Json(Value),
    Bytes { media_type: String, bytes: Vec<u8> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiResponse {
    pub status: u16,
    pub body: ApiBody,
}

impl ApiResponse {
    fn json(status: u16, value: Value) -> Self {
        Self { status, body: ApiBody::Json(value) }
    }

    pub fn json_body(&self) -> Option<&Value> {
        match &self.body {
            ApiBody::Json(v) => Some(v),
            ApiBody::Bytes { .. } => None,
        }
    }
}

/// Error record returned by every failing route.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    pub retryable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<String>,
}

impl ApiError {
    fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_string(), message: message.into(), retryable: false, fields: Vec::new() }
    }

    fn retryable(mut self) -> Self {
        self.retryable = true;
        self
    }

    fn validation(fields: &[&str], message: impl Into<String>) -> Self {
        Self {
            fields: fields.iter().map(|f| f.to_string()).collect(),
            ..Self::new(422, "validation_failed", message)
        }
    }

    fn not_found(path: &str) -> Self {
        Self::new(404, "route_not_found", format!("no route for {path}"))
    }

    pub fn into_response(self) -> ApiResponse {
        let status = self.status;
        ApiResponse::json(status, json!({ "error": self }))
    }
}

impl From<BookError> for ApiError {
    fn from(e: BookError) -> Self {
        let msg = e.to_string();
        match e {
            BookError::NotFound(_) => Self::new(404, "book_not_found", msg),
            BookError::AlreadyExists(_) => Self::new(409, "book_exists", msg),
            BookError::NotConfirmed(_) => Self::new(409, "book_not_confirmed", msg),
            BookError::PageOutOfRange { .. } => Self::validation(&["page"], msg),
            BookError::NoImages => Self::validation(&["images"], msg),
            BookError::Invalid { field, .. } => Self::validation(&[field], msg),
            BookError::AllPagesFailed => Self::new(422, "ocr_failed", msg),
            BookError::Bundle { .. } => Self::validation(&["bundle"], msg),
            BookError::Io(_) => Self::new(503, "storage_error", msg).retryable(),
            BookError::Retrieval(_) => Self::new(503, "provider_unavailable", msg).retryable(),
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let retryable = e.is_retryable();
        let msg = e.to_string();
        let err = match e {
            OrchestratorError::Book(b) => return b.into(),
            OrchestratorError::SessionNotFound(_) => Self::new(404, "session_not_found", msg),
            OrchestratorError::Conflict { .. } => Self::new(409, "session_conflict", msg),
            OrchestratorError::Transition(_) => Self::new(409, "illegal_transition", msg),
            OrchestratorError::Invalid { field, .. } => Self::validation(&[field], msg),
            OrchestratorError::Dialogue(_) => Self::new(503, "provider_unavailable", msg),
            OrchestratorError::Log(LogError::Io(_)) => Self::new(503, "storage_error", msg),
            OrchestratorError::Log(_) => Self::new(500, "event_log_error", msg),
        };
        Self { retryable, ..err }
    }
}

type ApiResult = Result<ApiResponse, ApiError>;

/// One dialogue turn as shown to clients, with the phase the session was in
/// right after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub seq: u64,
    pub kind: String,
    pub speaker: Speaker,
    pub text: String,
    pub moves: Vec<DialogueMove>,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub follow_up_expected: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub child_initiated: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audio_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningView {
    pub seq: u64,
    pub code: String,
    pub message: String,
}

fn turn_view(event: &SessionEvent, phase: Phase) -> Option<TurnView> {
    let view = |speaker: Speaker, text: &str, moves: &[DialogueMove], follow: Option<bool>, initiated, audio: &Option<String>| TurnView {
        seq: event.seq,
        kind: event.payload.kind().to_string(),
        speaker,
        text: text.to_string(),
        moves: moves.to_vec(),
        phase,
        follow_up_expected: follow,
        child_initiated: initiated,
        audio_key: audio.clone(),
    };
    match &event.payload {
        EventPayload::GreetingTurn { speaker, text, moves, audio_key } => Some(view(*speaker, text, moves, None, None, audio_key)),
        EventPayload::InteractionTurn { speaker, text, moves, follow_up_expected, child_initiated, audio_key, .. } => Some(view(
            *speaker,
            text,
            moves,
            (*speaker == Speaker::Assistant).then_some(*follow_up_expected),
            (*speaker == Speaker::Child).then_some(*child_initiated),
            audio_key,
        )),
        EventPayload::SummaryTurn { speaker, text, moves, follow_up_expected, audio_key } => Some(view(
            *speaker,
            text,
            moves,
            (*speaker == Speaker::Assistant).then_some(*follow_up_expected),
            None,
            audio_key,
        )),
        _ => None,
    }
}

/// Turns, surfaced knowledge and warnings among `events`, replayed from
/// `before` so each turn carries its phase.
fn describe_events(before: &SessionState, events: &[SessionEvent]) -> Value {
    let mut state = before.clone();
    let mut turns = Vec::new();
    let mut knowledge = Vec::new();
    let mut warnings = Vec::new();
    for e in events {
        if let Ok(next) = advance(&state, &e.payload) {
            state = next;
        }
        if let Some(t) = turn_view(e, state.phase) {
            turns.push(t);
        }
        match &e.payload {
            EventPayload::KnowledgeSurfaced { page_index, entry_id, statement, grade, keyword, similarity } => {
                knowledge.push(json!({
                    "seq": e.seq, "page_index": page_index, "entry_id": entry_id, "statement": statement,
                    "grade": grade, "knowledge_level": grade.display_name(), "keyword": keyword, "similarity": similarity,
                }));
            }
            EventPayload::Warning { code, message } => {
                warnings.push(WarningView { seq: e.seq, code: code.clone(), message: message.clone() })
            }
            _ => {}
        }
    }
    json!({ "turns": turns, "knowledge": knowledge, "warnings": warnings })
}

fn knowledge_card(k: &MatchedKnowledge) -> Value {
    json!({
        "entry_id": k.entry_id, "statement": k.statement, "grade": k.grade,
        "knowledge_level": k.grade.display_name(), "keyword": k.keyword, "similarity": k.similarity,
    })
}

fn session_view(state: &SessionState, events: &[SessionEvent]) -> Value {
    let concept = state.episode.as_ref().and_then(|e| e.knowledge.as_ref()).or(state.pending_knowledge.as_ref());
    let pending_assistant = state.episode.as_ref().is_some_and(|e| e.awaiting_assistant());
    let awaiting_child = match state.phase {
        Phase::Greeting => state.greeting_turns.last().is_some_and(|t| t.speaker == Speaker::Assistant),
        Phase::Interaction | Phase::Summary => state.episode.as_ref().is_some_and(|e| e.awaiting_child()),
        _ => false,
    };
    // Latest turns: everything since the current conversation began.
    let start = events
        .iter()
        .rposition(|e| {
            matches!(
                &e.payload,
                EventPayload::SessionStarted { .. } | EventPayload::PageShown { .. } | EventPayload::ModeSet { .. }
            ) || matches!(&e.payload, EventPayload::SummaryTurn { .. }) && state.phase != Phase::Summary
        })
        .map_or(0, |i| i + 1);
    let mut replayed = SessionState::default();
    for e in &events[..start] {
        replayed = advance(&replayed, &e.payload).unwrap_or(replayed);
    }
    let recent = describe_events(&replayed, &events[start..]);
    json!({
        "session": state,
        "concept_card": concept.map(knowledge_card),
        "awaiting_child": awaiting_child,
        "pending_assistant_turn": pending_assistant,
        "latest": recent,
    })
}

fn entry_view(e: &LibraryEntry) -> Value {
    json!({
        "id": e.book.id,
        "title": e.book.title,
        "tags": e.book.theme_tags,
        "page_count": e.book.page_count(),
        "origin": e.book.origin,
        "status": e.status,
        "has_summary": e.book.summary.is_some(),
    })
}

fn book_view(e: &LibraryEntry) -> Value {
    json!({ "book": e.book, "status": e.status })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    child_id: String,
    book_id: String,
    #[serde(default)]
    regreet: bool,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Signal {
    NextPage,
    Retry,
    Finish,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PostTurn {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    signal: Option<Signal>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImportBook {
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    manifest: Option<Value>,
    #[serde(default)]
    pages: HashMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhotoUpload {
    #[serde(default)]
    title: String,
    images: Vec<PhotoImage>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhotoImage {
    #[serde(default = "default_image_type")]
    media_type: String,
    data_base64: String,
}

fn default_image_type() -> String {
    "image/jpeg".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EditPage {
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetTags {
    tags: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
struct PreviewQuery {
    age: Option<u8>,
    grade: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct DashboardQuery {
    knowledge_rule: Option<KnowledgeRule>,
    include_setup_time: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
struct LibraryQuery {
    tag: Option<String>,
}

fn parse_body<T: DeserializeOwned>(req: &ApiRequest) -> Result<T, ApiError> {
    let body = if req.body.is_empty() { b"{}".as_slice() } else { req.body.as_slice() };
    serde_json::from_slice(body).map_err(|e| {
        let field = e.to_string().split('`').nth(1).unwrap_or("body").to_string();
        ApiError { fields: vec![field], ..ApiError::new(422, "validation_failed", format!("invalid request body: {e}")) }
    })
}

fn parse_query<T: DeserializeOwned>(req: &ApiRequest) -> Result<T, ApiError> {
    serde_urlencoded::from_str(&req.query).map_err(|e| ApiError::validation(&["query"], format!("invalid query: {e}")))
}

/// Shared service state behind every route.
pub struct Service {
    orchestrator: Arc<Orchestrator>,
    ocr: Option<Arc<dyn OcrEngine>>,
    dashboard: DashboardOptions,
    offline: bool,
}

impl Service {
    pub fn new(
        orchestrator: Arc<Orchestrator>,
        ocr: Option<Arc<dyn OcrEngine>>,
        dashboard: DashboardOptions,
        offline: bool,
    ) -> Self {
        Self { orchestrator, ocr, dashboard, offline }
    }

    pub fn orchestrator(&self) -> &Arc<Orchestrator> {
        &self.orchestrator
    }

    pub fn dispatch(&self, req: &ApiRequest) -> ApiResponse {
        let result = self.route(req);
        match result {
            Ok(r) => r,
            Err(e) => {
                if e.status >= 500 {
                    tracing::warn!(path = %req.path, code = %e.code, message = %e.message, "request failed");
                }
                e.into_response()
            }
        }
    }

    fn route(&self, req: &ApiRequest) -> ApiResult {
        use Method::*;
        let segments: Vec<&str> = req.path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        match (req.method, segments.as_slice()) {
            (Get, ["healthz"]) => Ok(ApiResponse::json(
                200,
                json!({ "status": "ok", "api_version": API_VERSION, "offline": self.offline }),
            )),
            (Get, ["library"]) => self.library(req),
            (Post, ["books", "import"]) => self.import_book(req),
            (Post, ["books", "photos"]) => self.upload_photos(req),
            (Get, ["books", id]) => {
                let entry = self.orchestrator.library().get(id).ok_or_else(|| BookError::NotFound(id.to_string()))?;
                Ok(ApiResponse::json(200, book_view(&entry)))
            }
            (Patch, ["books", id, "pages", n]) => self.edit_page(req, id, n),
            (Post, ["books", id, "confirm"]) => {
                self.orchestrator.library().confirm(id)?;
                let entry = self.orchestrator.library().get(id).expect("just confirmed");
                Ok(ApiResponse::json(200, book_view(&entry)))
            }
            (Put, ["books", id, "tags"]) => {
                let body: SetTags = parse_body(req)?;
                self.orchestrator.library().set_tags(id, &body.tags)?;
                let entry = self.orchestrator.library().get(id).expect("just tagged");
                Ok(ApiResponse::json(200, book_view(&entry)))
            }
            (Get, ["books", id, "knowledge-preview"]) => self.preview(req, id),
            (Post, ["sessions"]) => self.create_session(req),
            (Get, ["sessions", id]) => {
                let state = self.session(id)?;
                Ok(ApiResponse::json(200, session_view(&state, &self.orchestrator.log().stream(id))))
            }
            (Get, ["sessions", id, "transcript"]) => {
                self.session(id)?;
                let events = self.orchestrator.log().stream(id);
                Ok(ApiResponse::json(200, json!({ "session_id": id, "transcript": render_transcript(&events) })))
            }
            (Post, ["sessions", id, "turns"]) => self.post_turn(req, id),
            (Put, ["sessions", id, "mode"]) => self.set_mode(req, id),
            (Get, ["dashboard", child]) => self.dashboard(req, child),
            (Get, ["profiles", child]) => match self.orchestrator.stored_profile(child) {
                Some(p) => Ok(ApiResponse::json(200, json!({ "child_id": child, "profile": p }))),
                None => Err(ApiError::new(404, "profile_not_found", format!("no profile for `{child}`"))),
            },
            (Get, ["audio", key]) => match self.orchestrator.assets().get(key) {
                Some(a) => Ok(ApiResponse { status: 200, body: ApiBody::Bytes { media_type: a.media_type, bytes: a.bytes } }),
                None => Err(ApiError::new(404, "asset_not_found", format!("no audio asset `{key}`"))),
            },
            (_, path) if Self::known(path) => {
                Err(ApiError::new(405, "method_not_allowed", format!("{:?} not allowed on {}", req.method, req.path)))
            }
            _ => Err(ApiError::not_found(&req.path)),
        }
    }

    fn known(path: &[&str]) -> bool {
        matches!(
            path,
            ["healthz"]
                | ["library"]
                | ["books", "import" | "photos"]
                | ["books", _]
                | ["books", _, "pages", _]
                | ["books", _, "confirm" | "tags" | "knowledge-preview"]
                | ["sessions"]
                | ["sessions", _]
                | ["sessions", _, "turns" | "mode" | "transcript"]
                | ["dashboard", _]
                | ["profiles", _]
                | ["audio", _]
        )
    }

    fn session(&self, id: &str) -> Result<SessionState, ApiError> {
        self.orchestrator.session(id).ok_or_else(|| OrchestratorError::SessionNotFound(id.to_string()).into())
    }

    fn library(&self, req: &ApiRequest) -> ApiResult {
        let q: LibraryQuery = parse_query(req)?;
        let lib = self.orchestrator.library();
        let entries = match q.tag.as_deref() {
            Some(tag) => lib.by_tag(tag),
            None => lib.list(),
        };
        Ok(ApiResponse::json(200, json!({ "books": entries.iter().map(entry_view).collect::<Vec<_>>() })))
    }

    fn import_book(&self, req: &ApiRequest) -> ApiResult {
        let body: ImportBook = parse_body(req)?;
        let parsed = match (body.path, body.manifest) {
            (Some(path), None) => {
                crate::book::read_bundle_with_status(std::path::Path::new(&path)).map_err(ApiError::from)?
            }
            (None, Some(manifest)) => {
                let pages = body.pages;
                parse_bundle(&manifest.to_string(), |name| {
                    pages.get(name).cloned().ok_or_else(|| "page text missing from request".to_string())
                })
                .map_err(|m| ApiError::validation(&["manifest"], m))?
            }
            _ => return Err(ApiError::validation(&["path", "manifest"], "send exactly one of `path` or `manifest`")),
        };
        let (book, status) = parsed;
        let lib = self.orchestrator.library();
        let existed = lib.get(&book.id).is_some();
        match status {
            BookStatus::Confirmed => lib.add_confirmed(book.clone())?,
            BookStatus::Draft => lib.add_draft(book.clone())?,
        }
        let entry = lib.get(&book.id).expect("just imported");
        Ok(ApiResponse::json(if existed { 200 } else { 201 }, book_view(&entry)))
    }

    fn upload_photos(&self, req: &ApiRequest) -> ApiResult {
        let ocr = self
            .ocr
            .as_ref()
            .ok_or_else(|| ApiError::new(503, "ocr_unavailable", "no text recognition provider is configured"))?;
        let body: PhotoUpload = parse_body(req)?;
        let mut images = Vec::with_capacity(body.images.len());
        for (i, img) in body.images.iter().enumerate() {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(img.data_base64.trim())
                .map_err(|e| ApiError::validation(&["images"], format!("image {i}: {e}")))?;
            images.push(ImageUpload { media_type: img.media_type.clone(), bytes });
        }
        let out = ingest_photos(&body.title, &images, ocr.as_ref(), self.orchestrator.assets())?;
        let lib = self.orchestrator.library();
        let existed = lib.get(&out.book.id).is_some();
        if !existed {
            lib.add_draft(out.book.clone())?;
        }
        let entry = lib.get(&out.book.id).expect("stored");
        let mut view = book_view(&entry);
        view["warnings"] = json!(out.warnings);
        Ok(ApiResponse::json(if existed { 200 } else { 201 }, view))
    }

    fn edit_page(&self, req: &ApiRequest, id: &str, n: &str) -> ApiResult {
        let index: usize = n.parse().map_err(|_| ApiError::validation(&["page"], format!("`{n}` is not a page index")))?;
        let body: EditPage = parse_body(req)?;
        self.orchestrator.library().edit_page(id, index, &body.text)?;
        self.orchestrator.summaries().invalidate(id);
        let entry = self.orchestrator.library().get(id).expect("just edited");
        Ok(ApiResponse::json(200, book_view(&entry)))
    }

    fn preview(&self, req: &ApiRequest, id: &str) -> ApiResult {
        let q: PreviewQuery = parse_query(req)?;
        let cap = match (q.age, q.grade) {
            (Some(age), None) => grade_for_age(age).map_err(|e| ApiError::validation(&["age"], e.to_string()))?,
            (None, Some(g)) => g.parse::<GradeLevel>().map_err(|e| ApiError::validation(&["grade"], e.to_string()))?,
            _ => return Err(ApiError::validation(&["age", "grade"], "give exactly one of `age` or `grade`")),
        };
        let book = self.orchestrator.library().confirmed(id)?;
        let graph = self.orchestrator.retriever().graph().clone();
        let per_page =
            preview_matched_knowledge(&book, cap, self.orchestrator.retriever(), &self.orchestrator.config().retrieval)?;
        let pages: Vec<Value> = per_page
            .iter()
            .enumerate()
            .map(|(i, matches)| {
                json!({
                    "page_index": i,
                    "matches": matches.iter().map(|m| json!({
                        "entry_id": m.entry_id,
                        "statement": graph.get(&m.entry_id).map(|e| e.statement.clone()),
                        "grade": m.grade,
                        "knowledge_level": m.grade.display_name(),
                        "keyword": m.keyword.surface,
                        "similarity": m.similarity,
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        Ok(ApiResponse::json(200, json!({ "book_id": id, "grade_cap": cap, "pages": pages })))
    }

    fn create_session(&self, req: &ApiRequest) -> ApiResult {
        let body: CreateSession = parse_body(req)?;
        let out = self.orchestrator.start_session(&body.child_id, &body.book_id, body.regreet)?;
        let mut view = describe_events(&SessionState::default(), &out.events);
        view["session"] = json!(out.state);
        Ok(ApiResponse::json(201, view))
    }

    fn post_turn(&self, req: &ApiRequest, id: &str) -> ApiResult {
        let body: PostTurn = parse_body(req)?;
        let input = match (body.text, body.signal) {
            (Some(text), None) => Input::ChildText(text),
            (None, Some(Signal::NextPage)) => Input::NextPage,
            (None, Some(Signal::Retry)) => Input::Retry,
            (None, Some(Signal::Finish)) => Input::Finish,
            _ => return Err(ApiError::validation(&["text", "signal"], "send exactly one of `text` or `signal`")),
        };
        self.run_input(id, input)
    }

    fn run_input(&self, id: &str, input: Input) -> ApiResult {
        let before = self.session(id)?;
        let before_len = self.orchestrator.log().next_seq(id);
        match self.orchestrator.handle(id, input) {
            Ok(out) => {
                let mut view = describe_events(&before, &out.events);
                view["session"] = json!(out.state);
                Ok(ApiResponse::json(200, view))
            }
            Err(e) => {
                let mut err = ApiError::from(e);
                if self.orchestrator.log().next_seq(id) > before_len {
                    err.message.push_str(" (partial progress was recorded; GET the session for details)");
                }
                Err(err)
            }
        }
    }

    fn set_mode(&self, req: &ApiRequest, id: &str) -> ApiResult {
        let mode: ReadingMode = parse_body(req)?;
        let state = self.session(id)?;
        if state.mode == Some(mode) {
            let mut view = describe_events(&state, &[]);
            view["session"] = json!(state);
            return Ok(ApiResponse::json(200, view));
        }
        self.run_input(id, Input::SetMode(mode))
    }

    fn dashboard(&self, req: &ApiRequest, child: &str) -> ApiResult {
        let q: DashboardQuery = parse_query(req)?;
        let opts = DashboardOptions {
            include_setup_time: q.include_setup_time.unwrap_or(self.dashboard.include_setup_time),
            knowledge_rule: q.knowledge_rule.unwrap_or(self.dashboard.knowledge_rule),
            now: self.dashboard.now.or_else(|| Some(self.orchestrator.now().wall)),
        };
        let streams = self.orchestrator.log().child_streams(child);
        Ok(ApiResponse::json(200, json!(compute_dashboard(child, &streams, &opts))))
    }
}
