//! Bundled fixture corpus: knowledge base, embedder concepts, the
//! dinosaur-seaside book and scripted sessions. Used by `--offline` and by
//! the test suites.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assets::AssetStore;
use crate::book::{parse_bundle, Book, Library};
use crate::clock::{Clock, SteppingClock};
use crate::knowledge_base::{load_knowledge_graph, KnowledgeGraph};
use crate::orchestrator::{Input, Orchestrator, OrchestratorConfig, OrchestratorError, OrchestratorParts};
use crate::persistence::EventLog;
use crate::providers::mock::{EmbedderOverrides, FixtureEmbedder, ScriptRecord, ScriptedChat};
use crate::providers::{ChatProvider, SpeechSynthesizer};
use crate::retrieval::Retriever;
use crate::session::{SessionEvent, SessionState};

pub const KB_JSON: &str = include_str!("../fixtures/kb.json");
pub const EMBEDDER_OVERRIDES_JSON: &str = include_str!("../fixtures/embedder_overrides.json");
pub const FIXTURE_BOOK_ID: &str = "dinosaur-seaside";

const BOOK_MANIFEST: &str = include_str!("../fixtures/books/dinosaur-seaside/manifest.json");
const BOOK_PAGES: [(&str, &str); 3] = [
    ("page-000.txt", include_str!("../fixtures/books/dinosaur-seaside/page-000.txt")),
    ("page-001.txt", include_str!("../fixtures/books/dinosaur-seaside/page-001.txt")),
    ("page-002.txt", include_str!("../fixtures/books/dinosaur-seaside/page-002.txt")),
];

/// Scripted sessions shipped with the crate, by name.
pub const SESSION_SCRIPTS: [(&str, &str); 3] = [
    ("water_forms", include_str!("../fixtures/sessions/water_forms.json")),
    ("sunlight_and_shade", include_str!("../fixtures/sessions/sunlight_and_shade.json")),
    ("after_the_story", include_str!("../fixtures/sessions/after_the_story.json")),
];

pub fn knowledge_graph() -> KnowledgeGraph {
    load_knowledge_graph(KB_JSON).expect("fixture knowledge base is valid")
}

pub fn embedder_overrides() -> EmbedderOverrides {
    serde_json::from_str(EMBEDDER_OVERRIDES_JSON).expect("fixture embedder overrides are valid")
}

pub fn embedder() -> FixtureEmbedder {
    FixtureEmbedder::with_overrides(&embedder_overrides())
}

pub fn retriever() -> Retriever {
    Retriever::new(Arc::new(knowledge_graph()), Arc::new(embedder()))
}

pub fn book() -> Book {
    parse_bundle(BOOK_MANIFEST, |name| {
        BOOK_PAGES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| "missing page file".to_string())
    })
    .expect("fixture book is valid")
    .0
}

/// Write the fixture book as a bundle directory, for import tests and demos.
pub fn write_book_bundle(dir: &std::path::Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.json"), BOOK_MANIFEST)?;
    for (name, text) in BOOK_PAGES {
        std::fs::write(dir.join(name), text)?;
    }
    Ok(())
}

pub fn library() -> Library {
    let library = Library::in_memory();
    library.add_confirmed(book()).expect("fresh library");
    library
}

/// A scripted session: the chat replies in call order plus the inputs the
/// child (or parent) sends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionScript {
    pub name: String,
    pub child_id: String,
    pub book_id: String,
    #[serde(default)]
    pub regreet: bool,
    pub chat: Vec<ScriptRecord>,
    pub inputs: Vec<Input>,
}

impl SessionScript {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn chat_provider(&self) -> ScriptedChat {
        ScriptedChat::from_records(self.chat.clone()).expect("script records are well formed")
    }
}

pub fn session_script(name: &str) -> Option<SessionScript> {
    SESSION_SCRIPTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, json)| SessionScript::from_json(json).expect("bundled script parses"))
}

pub fn session_scripts() -> Vec<SessionScript> {
    SESSION_SCRIPTS.iter().map(|(n, _)| session_script(n).expect("listed")).collect()
}

/// Knobs for `orchestrator`.
pub struct Setup {
    pub chat: Arc<dyn ChatProvider>,
    pub speech: Option<Arc<dyn SpeechSynthesizer>>,
    pub library: Arc<Library>,
    pub log: Arc<EventLog>,
    pub clock: Arc<dyn Clock>,
    pub config: OrchestratorConfig,
}

impl Setup {
    pub fn with_chat(chat: Arc<dyn ChatProvider>) -> Self {
        Self {
            chat,
            speech: None,
            library: Arc::new(library()),
            log: Arc::new(EventLog::in_memory()),
            clock: Arc::new(SteppingClock::fixture()),
            config: OrchestratorConfig::default(),
        }
    }

    pub fn build(self) -> Result<Orchestrator, OrchestratorError> {
        Orchestrator::new(OrchestratorParts {
            library: self.library,
            retriever: Arc::new(retriever()),
            chat: self.chat,
            speech: self.speech,
            assets: Arc::new(AssetStore::in_memory()),
            log: self.log,
            clock: self.clock,
            config: self.config,
        })
    }
}

/// Outcome of driving a script to its end.
#[derive(Debug, Clone)]
pub struct ScriptRun {
    pub session_id: String,
    pub state: SessionState,
    pub events: Vec<SessionEvent>,
    pub unused_chat_steps: usize,
}

/// Run `script` against a fresh fixture orchestrator.
pub fn run_script(script: &SessionScript) -> Result<ScriptRun, OrchestratorError> {
    let chat = Arc::new(script.chat_provider());
    let orch = Setup::with_chat(chat.clone()).build()?;
    run_script_on(&orch, script, chat.as_ref())
}

/// Run `script` on an existing orchestrator whose chat provider is `chat`.
pub fn run_script_on(
    orch: &Orchestrator,
    script: &SessionScript,
    chat: &ScriptedChat,
) -> Result<ScriptRun, OrchestratorError> {
    let started = orch.start_session(&script.child_id, &script.book_id, script.regreet)?;
    let session_id = started.state.session_id.clone();
    let mut state = started.state;
    for input in &script.inputs {
        state = orch.handle(&session_id, input.clone())?.state;
    }
    Ok(ScriptRun {
        events: orch.log().stream(&session_id),
        session_id,
        state,
        unused_chat_steps: chat.remaining(),
    })
}
