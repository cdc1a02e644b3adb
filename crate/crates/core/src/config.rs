//! Service configuration, loaded from TOML and overridden by CLI flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::api::Service;
use crate::assets::AssetStore;
use crate::book::Library;
use crate::clock::SystemClock;
use crate::dashboard::{DashboardOptions, KnowledgeRule};
use crate::fixtures;
use crate::knowledge_base::{load_knowledge_graph_file, KnowledgeBaseError};
use crate::orchestrator::{Orchestrator, OrchestratorConfig, OrchestratorError, OrchestratorParts};
use crate::persistence::{EventLog, LogError};
use crate::providers::http::{HttpChatClient, HttpEmbedder, HttpOcrClient, HttpSpeechClient};
use crate::providers::mock::{MockOcr, MockSpeech, OfflineTutor};
use crate::providers::{
    ChatProvider, ConfigError as ProviderConfigError, Embedder, OcrEngine, ProviderConfig, ProviderError,
    RetryingChat, Sleeper, SpeechSynthesizer,
};
use crate::retrieval::{RetrievalConfig, Retriever};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid setting {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("provider `{name}`: {source}")]
    Provider { name: &'static str, source: ProviderConfigError },
    #[error("provider `{name}` could not be created: {source}")]
    Client { name: &'static str, source: ProviderError },
    #[error("provider `{0}` is not configured; set it in the config file or run with --offline")]
    MissingProvider(&'static str),
    #[error(transparent)]
    KnowledgeBase(#[from] KnowledgeBaseError),
    #[error(transparent)]
    Book(#[from] crate::book::BookError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error("data directory: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub chat: Option<ProviderConfig>,
    pub embed: Option<ProviderConfig>,
    pub speech: Option<ProviderConfig>,
    pub ocr: Option<ProviderConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSettings {
    pub threshold: f64,
    pub max_matches_per_section: usize,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        let d = RetrievalConfig::default();
        Self { threshold: d.threshold, max_matches_per_section: d.max_matches_per_section }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DashboardSettings {
    pub include_setup_time: bool,
    pub knowledge_rule: KnowledgeRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub port: u16,
    /// Books, event log and audio live here. Unset keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Knowledge base file. Unset uses the bundled fixture knowledge base.
    pub kb: Option<PathBuf>,
    /// Use the deterministic mocks for every provider.
    pub offline: bool,
    /// Add the bundled fixture book to the library at startup.
    /// Defaults to on in offline mode.
    pub seed_fixture_book: Option<bool>,
    pub max_greeting_turns: usize,
    pub retrieval: RetrievalSettings,
    pub dashboard: DashboardSettings,
    pub providers: ProvidersConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            data_dir: None,
            kb: None,
            offline: false,
            seed_fixture_book: None,
            max_greeting_turns: OrchestratorConfig::default().max_greeting_turns,
            retrieval: RetrievalSettings::default(),
            dashboard: DashboardSettings::default(),
            providers: ProvidersConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml(&raw).map_err(|message| ConfigError::Parse { path: path.into(), message })
    }

    pub fn from_toml(raw: &str) -> Result<Self, String> {
        toml::from_str(raw).map_err(|e| e.to_string())
    }

    pub fn offline() -> Self {
        Self { offline: true, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = self.retrieval.threshold;
        if !(t.is_finite() && (-1.0..=1.0).contains(&t)) {
            return Err(ConfigError::Invalid { field: "retrieval.threshold", reason: format!("{t} is not in [-1, 1]") });
        }
        if self.retrieval.max_matches_per_section == 0 {
            return Err(ConfigError::Invalid {
                field: "retrieval.max_matches_per_section",
                reason: "must be at least 1".into(),
            });
        }
        if self.max_greeting_turns == 0 {
            return Err(ConfigError::Invalid { field: "max_greeting_turns", reason: "must be at least 1".into() });
        }
        let named = [
            ("chat", &self.providers.chat),
            ("embed", &self.providers.embed),
            ("speech", &self.providers.speech),
            ("ocr", &self.providers.ocr),
        ];
        for (name, cfg) in named {
            if let Some(cfg) = cfg {
                cfg.validate().map_err(|source| ConfigError::Provider { name, source })?;
            }
        }
        Ok(())
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig::default()
            .with_threshold(self.retrieval.threshold)
            .with_max_matches(self.retrieval.max_matches_per_section)
    }

    pub fn dashboard_options(&self) -> DashboardOptions {
        DashboardOptions {
            include_setup_time: self.dashboard.include_setup_time,
            knowledge_rule: self.dashboard.knowledge_rule,
            now: None,
        }
    }
}

/// Providers chosen for a configuration.
pub struct ProviderSet {
    pub chat: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub speech: Option<Arc<dyn SpeechSynthesizer>>,
    pub ocr: Option<Arc<dyn OcrEngine>>,
}

impl ProviderSet {
    pub fn offline() -> Self {
        Self {
            chat: Arc::new(OfflineTutor),
            embedder: Arc::new(fixtures::embedder()),
            speech: Some(Arc::new(MockSpeech::default())),
            ocr: Some(Arc::new(MockOcr::default())),
        }
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ConfigError> {
        if config.offline {
            return Ok(Self::offline());
        }
        let p = &config.providers;
        let client_err = |name| move |source| ConfigError::Client { name, source };
        let chat_cfg = p.chat.clone().ok_or(ConfigError::MissingProvider("chat"))?;
        let policy = chat_cfg.retry;
        let chat: Arc<dyn ChatProvider> = Arc::new(HttpChatClient::new(chat_cfg).map_err(client_err("chat"))?);
        let embed_cfg = p.embed.clone().ok_or(ConfigError::MissingProvider("embed"))?;
        let embedder = Arc::new(HttpEmbedder::new(embed_cfg).map_err(client_err("embed"))?);
        let speech = match p.speech.clone() {
            Some(c) => Some(Arc::new(HttpSpeechClient::new(c).map_err(client_err("speech"))?) as Arc<dyn SpeechSynthesizer>),
            None => None,
        };
        let ocr = match p.ocr.clone() {
            Some(c) => Some(Arc::new(HttpOcrClient::new(c).map_err(client_err("ocr"))?) as Arc<dyn OcrEngine>),
            None => None,
        };
        Ok(Self {
            chat: Arc::new(RetryingChat::new(chat, policy, Sleeper::Thread)),
            embedder,
            speech,
            ocr,
        })
    }
}

/// Assemble the service described by `config` with the given providers.
pub fn build_service_with(config: &ServiceConfig, providers: ProviderSet) -> Result<Service, ConfigError> {
    config.validate()?;
    let graph = match &config.kb {
        Some(path) => load_knowledge_graph_file(path)?,
        None => fixtures::knowledge_graph(),
    };
    let (library, log, assets) = match &config.data_dir {
        Some(dir) => (
            Library::open(dir.join("books"))?,
            EventLog::open(dir.join("events"))?,
            AssetStore::open(dir.join("assets"))?,
        ),
        None => (Library::in_memory(), EventLog::in_memory(), AssetStore::in_memory()),
    };
    if config.seed_fixture_book.unwrap_or(config.offline) && library.get(fixtures::FIXTURE_BOOK_ID).is_none() {
        library.add_confirmed(fixtures::book())?;
    }
    let orchestrator = Orchestrator::new(OrchestratorParts {
        library: Arc::new(library),
        retriever: Arc::new(Retriever::new(Arc::new(graph), providers.embedder)),
        chat: providers.chat,
        speech: providers.speech,
        assets: Arc::new(assets),
        log: Arc::new(log),
        clock: Arc::new(SystemClock::default()),
        config: OrchestratorConfig {
            retrieval: config.retrieval_config(),
            max_greeting_turns: config.max_greeting_turns,
            ..OrchestratorConfig::default()
        },
    })?;
    Ok(Service::new(Arc::new(orchestrator), providers.ocr, config.dashboard_options(), config.offline))
}

pub fn build_service(config: &ServiceConfig) -> Result<Service, ConfigError> {
    build_service_with(config, ProviderSet::from_config(config)?)
}
