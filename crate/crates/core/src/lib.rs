//! Dialogic reading companion: grade-gated knowledge retrieval, scaffolded
//! question generation and an event-sourced reading session service.

pub mod api;
pub mod assets;
pub mod book;
pub mod clock;
pub mod config;
pub mod dashboard;
pub mod dialogue;
pub mod fixtures;
pub mod grade;
pub mod knowledge_base;
pub mod learner;
pub mod orchestrator;
pub mod persistence;
pub mod prompt;
pub mod providers;
pub mod retrieval;
pub mod server;
pub mod session;
pub mod text;
