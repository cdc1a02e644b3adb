//! Grade-tagged knowledge graph built from science core ideas and their
//! performance expectations.
//!
//! The on-disk format is a UTF-8 JSON array of entry records with the fields
//! `id`, `dci_code`, `grade`, `statement`, `performance_expectations` and
//! `topic_tags`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grade::GradeLevel;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub dci_code: String,
    pub grade: GradeLevel,
    pub statement: String,
    #[serde(default)]
    pub performance_expectations: Vec<String>,
    #[serde(default)]
    pub topic_tags: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeBaseError {
    #[error("knowledge base is not a JSON array of records: {0}")]
    Document(serde_json::Error),
    #[error("malformed record at index {index}: {message}")]
    Record { index: usize, message: String },
    #[error("record at index {index} has unknown grade label `{label}`")]
    UnknownGrade { index: usize, label: String },
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("entry `{0}` has an empty statement")]
    EmptyStatement(String),
    #[error("failed to read knowledge base: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    dci_code: String,
    grade: String,
    statement: String,
    #[serde(default)]
    performance_expectations: Vec<String>,
    #[serde(default)]
    topic_tags: Vec<String>,
}

/// Validated, immutable knowledge graph with grade and id indexes.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entries: Vec<KnowledgeEntry>,
    by_id: HashMap<String, usize>,
    by_grade: BTreeMap<GradeLevel, Vec<String>>,
}

impl KnowledgeGraph {
    pub fn from_entries(entries: Vec<KnowledgeEntry>) -> Result<Self, KnowledgeBaseError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        let mut by_grade: BTreeMap<GradeLevel, Vec<String>> = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            if entry.statement.trim().is_empty() {
                return Err(KnowledgeBaseError::EmptyStatement(entry.id.clone()));
            }
            if by_id.insert(entry.id.clone(), i).is_some() {
                return Err(KnowledgeBaseError::DuplicateId(entry.id.clone()));
            }
            by_grade.entry(entry.grade).or_default().push(entry.id.clone());
        }
        for ids in by_grade.values_mut() {
            ids.sort();
        }
        Ok(Self {
            entries,
            by_id,
            by_grade,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in source order.
    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&KnowledgeEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// Ids at exactly `grade`, sorted.
    pub fn ids_at(&self, grade: GradeLevel) -> &[String] {
        self.by_grade.get(&grade).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn grade_index(&self) -> &BTreeMap<GradeLevel, Vec<String>> {
        &self.by_grade
    }

    /// Entries whose grade does not exceed `cap`, ordered by (grade, id).
    pub fn entries_at_or_below(&self, cap: GradeLevel) -> Vec<&KnowledgeEntry> {
        self.by_grade
            .range(..=cap)
            .flat_map(|(_, ids)| ids.iter())
            .filter_map(|id| self.get(id))
            .collect()
    }

    /// Entry count per grade, including empty grades.
    pub fn histogram(&self) -> Vec<(GradeLevel, usize)> {
        GradeLevel::ALL
            .iter()
            .map(|&g| (g, self.ids_at(g).len()))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("entries serialize")
    }
}

/// Parse and validate a knowledge-base document.
pub fn load_knowledge_graph(source: &str) -> Result<KnowledgeGraph, KnowledgeBaseError> {
    let records: Vec<serde_json::Value> =
        serde_json::from_str(source).map_err(KnowledgeBaseError::Document)?;
    let mut entries = Vec::with_capacity(records.len());
    for (index, value) in records.into_iter().enumerate() {
        let raw: RawEntry = serde_json::from_value(value).map_err(|e| KnowledgeBaseError::Record {
            index,
            message: e.to_string(),
        })?;
        let grade = raw
            .grade
            .parse::<GradeLevel>()
            .ok()
            .filter(|g| g.label() == raw.grade)
            .ok_or_else(|| KnowledgeBaseError::UnknownGrade {
                index,
                label: raw.grade.clone(),
            })?;
        entries.push(KnowledgeEntry {
            id: raw.id,
            dci_code: raw.dci_code,
            grade,
            statement: raw.statement,
            performance_expectations: raw.performance_expectations,
            topic_tags: raw.topic_tags,
        });
    }
    KnowledgeGraph::from_entries(entries)
}

pub fn load_knowledge_graph_file(path: impl AsRef<Path>) -> Result<KnowledgeGraph, KnowledgeBaseError> {
    let text = std::fs::read_to_string(path)?;
    load_knowledge_graph(&text)
}
