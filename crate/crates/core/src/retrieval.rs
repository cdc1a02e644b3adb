//! Keyword extraction and grade-gated knowledge matching.
//!
//! A section is tokenized into content words, each keyword is embedded, and
//! scored against the statement embedding of every entry at or below the
//! child's grade cap. Pairs under the threshold are dropped; the rest are
//! ranked by similarity (ties: lower grade, then entry id, then keyword
//! position) and truncated to `max_matches_per_section`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::grade::GradeLevel;
use crate::knowledge_base::{KnowledgeEntry, KnowledgeGraph};
use crate::providers::{Embedder, ProviderError};
use crate::text;

pub const DEFAULT_THRESHOLD: f64 = 0.60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    /// Normalized surface form.
    pub surface: String,
    /// Character index of the first occurrence in the section.
    pub section_offset: usize,
    /// Term frequency within the section.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
}

impl EmbeddingVector {
    /// Returns `None` for an empty vector or non-finite components.
    pub fn new(components: Vec<f64>) -> Option<Self> {
        if components.is_empty() || components.iter().any(|c| !c.is_finite()) {
            return None;
        }
        Some(Self(components))
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// dot(a, b) / (|a| |b|), clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dimension() != b.dimension() {
        return Err(SimilarityError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub threshold: f64,
    pub max_matches_per_section: usize,
    pub stopwords: BTreeSet<String>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_matches_per_section: 1,
            stopwords: text::default_stopwords(),
        }
    }
}

impl RetrievalConfig {
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_max_matches(mut self, n: usize) -> Self {
        self.max_matches_per_section = n.max(1);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeMatch {
    pub keyword: Keyword,
    pub entry_id: String,
    pub grade: GradeLevel,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("embedding provider failed for section `{section}`: {source}")]
    Provider {
        section: String,
        #[source]
        source: ProviderError,
    },
    #[error("bad embedding for section `{section}`: {source}")]
    Similarity {
        section: String,
        #[source]
        source: SimilarityError,
    },
}

/// Content words of `section_text` in first-occurrence order, deduplicated
/// by normalized surface and weighted by term frequency.
pub fn extract_keywords(section_text: &str, config: &RetrievalConfig) -> Vec<Keyword> {
    let mut order: Vec<Keyword> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for token in text::tokenize(section_text) {
        let surface = text::normalize(token.text);
        if surface.is_empty() || config.stopwords.contains(&surface) {
            continue;
        }
        match seen.get(&surface) {
            Some(&i) => order[i].weight += 1.0,
            None => {
                seen.insert(surface.clone(), order.len());
                order.push(Keyword {
                    surface,
                    section_offset: token.char_offset,
                    weight: 1.0,
                });
            }
        }
    }
    order
}

/// Ranking used for emitted matches: similarity descending, then lower
/// grade, entry id, keyword offset.
pub fn match_order(a: &KnowledgeMatch, b: &KnowledgeMatch) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.grade.cmp(&b.grade))
        .then_with(|| a.entry_id.cmp(&b.entry_id))
        .then_with(|| a.keyword.section_offset.cmp(&b.keyword.section_offset))
}

/// Knowledge graph plus embedder, with statement embeddings memoized on first use.
pub struct Retriever {
    graph: Arc<KnowledgeGraph>,
    embedder: Arc<dyn Embedder>,
    statements: OnceCell<HashMap<String, EmbeddingVector>>,
}

impl Retriever {
    pub fn new(graph: Arc<KnowledgeGraph>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            graph,
            embedder,
            statements: OnceCell::new(),
        }
    }

    pub fn graph(&self) -> &Arc<KnowledgeGraph> {
        &self.graph
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    fn statement_vectors(&self, section: &str) -> Result<&HashMap<String, EmbeddingVector>, RetrievalError> {
        self.statements.get_or_try_init(|| {
            let entries = self.graph.entries();
            if entries.is_empty() {
                return Ok(HashMap::new());
            }
            let texts: Vec<&str> = entries.iter().map(|e| e.statement.as_str()).collect();
            let vectors = self.embed(section, &texts)?;
            Ok(entries.iter().map(|e| e.id.clone()).zip(vectors).collect())
        })
    }

    fn embed(&self, section: &str, texts: &[&str]) -> Result<Vec<EmbeddingVector>, RetrievalError> {
        let vectors = self.embedder.embed(texts).map_err(|source| RetrievalError::Provider {
            section: section.to_string(),
            source,
        })?;
        if vectors.len() != texts.len() {
            return Err(RetrievalError::Provider {
                section: section.to_string(),
                source: ProviderError::Malformed(format!(
                    "expected {} vectors, got {}",
                    texts.len(),
                    vectors.len()
                )),
            });
        }
        Ok(vectors)
    }

    /// Match one story section against entries at or below `grade_cap`.
    pub fn match_section(
        &self,
        section_id: &str,
        section_text: &str,
        grade_cap: GradeLevel,
        config: &RetrievalConfig,
    ) -> Result<Vec<KnowledgeMatch>, RetrievalError> {
        let keywords = extract_keywords(section_text, config);
        let candidates: Vec<&KnowledgeEntry> = self.graph.entries_at_or_below(grade_cap);
        if keywords.is_empty() || candidates.is_empty() {
            return Ok(Vec::new());
        }
        let statements = self.statement_vectors(section_id)?;
        let surfaces: Vec<&str> = keywords.iter().map(|k| k.surface.as_str()).collect();
        let keyword_vectors = self.embed(section_id, &surfaces)?;

        let mut matches = Vec::new();
        for (keyword, kv) in keywords.iter().zip(&keyword_vectors) {
            for entry in &candidates {
                let sv = &statements[&entry.id];
                let similarity = cosine_similarity(kv, sv).map_err(|source| RetrievalError::Similarity {
                    section: section_id.to_string(),
                    source,
                })?;
                if similarity >= config.threshold {
                    matches.push(KnowledgeMatch {
                        keyword: keyword.clone(),
                        entry_id: entry.id.clone(),
                        grade: entry.grade,
                        similarity,
                    });
                }
            }
        }
        matches.sort_by(match_order);
        matches.truncate(config.max_matches_per_section);
        Ok(matches)
    }
}

/// One-shot matching without a shared cache.
pub fn match_knowledge(
    section_text: &str,
    grade_cap: GradeLevel,
    graph: &KnowledgeGraph,
    embedder: Arc<dyn Embedder>,
    config: &RetrievalConfig,
) -> Result<Vec<KnowledgeMatch>, RetrievalError> {
    Retriever::new(Arc::new(graph.clone()), embedder).match_section("section", section_text, grade_cap, config)
}
