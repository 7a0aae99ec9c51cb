//! Subtopic model types: distributions over a finite subtopic table, the
//! documents and query that carry them, and the corpus file format.
//!
//! Everything here is immutable once validated. Distributions are dense
//! vectors aligned with the corpus subtopic table and are never renormalized
//! on input: a vector that does not sum to one is rejected.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on the sum of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// An entry counts as a point mass when it is this close to 1 (and the rest
/// are this close to 0).
pub const POINT_MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution is empty")]
    EmptyDistribution,
    #[error("entry {index} is not a finite number")]
    NonFiniteEntry { index: usize },
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    SumNotOne(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorpusError {
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("validation error: {0}")]
    ValidationError(String),
}

/// A subtopic of the corpus subtopic table.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubtopicId {
    pub index: usize,
    pub label: String,
}

/// Probability vector over the subtopic table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SubtopicDistribution {
    probs: Vec<f64>,
}

/// Checks a raw probability vector and wraps it.
pub fn validate_distribution(probs: &[f64]) -> Result<SubtopicDistribution, DistributionError> {
    SubtopicDistribution::new(probs.to_vec())
}

impl SubtopicDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::EmptyDistribution);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() {
                return Err(DistributionError::NonFiniteEntry { index });
            }
            if value < 0.0 {
                return Err(DistributionError::NegativeEntry { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistributionError::SumNotOne(sum));
        }
        Ok(Self { probs })
    }

    /// All mass on subtopic `index`.
    pub fn point_mass(dim: usize, index: usize) -> Self {
        assert!(
            index < dim,
            "point mass index {index} out of range for dimension {dim}"
        );
        let mut probs = vec![0.0; dim];
        probs[index] = 1.0;
        Self { probs }
    }

    pub fn uniform(dim: usize) -> Self {
        assert!(dim > 0, "uniform distribution needs at least one subtopic");
        Self {
            probs: vec![1.0 / dim as f64; dim],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn dim(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    /// Index of the point mass, if this distribution is one.
    pub fn point_mass_index(&self) -> Option<usize> {
        let hit = self
            .probs
            .iter()
            .position(|p| (p - 1.0).abs() <= POINT_MASS_TOLERANCE)?;
        let rest_zero = self
            .probs
            .iter()
            .enumerate()
            .all(|(i, p)| i == hit || p.abs() <= POINT_MASS_TOLERANCE);
        rest_zero.then_some(hit)
    }

    pub fn is_deterministic(&self) -> bool {
        self.point_mass_index().is_some()
    }

    /// Most probable subtopic; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Subtopics with nonzero probability.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub dist: SubtopicDistribution,
}

impl Document {
    pub fn new(id: impl Into<String>, dist: SubtopicDistribution) -> Self {
        Self {
            id: id.into(),
            dist,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub dist: SubtopicDistribution,
}

impl Query {
    pub fn new(id: impl Into<String>, dist: SubtopicDistribution) -> Self {
        Self {
            id: id.into(),
            dist,
        }
    }
}

/// The retrieval universe: an ordered subtopic table plus the documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    subtopics: Vec<String>,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new(subtopics: Vec<String>, documents: Vec<Document>) -> Result<Self, CorpusError> {
        if subtopics.is_empty() {
            return Err(CorpusError::SchemaError("subtopic table is empty".into()));
        }
        if documents.is_empty() {
            return Err(CorpusError::ValidationError(
                "corpus has no documents".into(),
            ));
        }
        let mut seen = HashSet::new();
        for doc in &documents {
            if doc.id.is_empty() {
                return Err(CorpusError::ValidationError("empty document id".into()));
            }
            if doc.dist.dim() != subtopics.len() {
                return Err(CorpusError::SchemaError(format!(
                    "document `{}`: dist has {} entries, expected {}",
                    doc.id,
                    doc.dist.dim(),
                    subtopics.len()
                )));
            }
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::ValidationError(format!("dup id `{}`", doc.id)));
            }
        }
        Ok(Self {
            subtopics,
            documents,
        })
    }

    pub fn subtopics(&self) -> &[String] {
        &self.subtopics
    }

    pub fn num_subtopics(&self) -> usize {
        self.subtopics.len()
    }

    pub fn subtopic(&self, index: usize) -> Option<SubtopicId> {
        self.subtopics.get(index).map(|label| SubtopicId {
            index,
            label: label.clone(),
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Checks that a query lives on this corpus' subtopic table.
    pub fn check_query(&self, query: &Query) -> Result<(), CorpusError> {
        if query.dist.dim() != self.subtopics.len() {
            return Err(CorpusError::SchemaError(format!(
                "query `{}`: dist has {} entries, expected {}",
                query.id,
                query.dist.dim(),
                self.subtopics.len()
            )));
        }
        Ok(())
    }
}

/// Whether every document and the query put all mass on a single subtopic.
pub fn is_deterministic_corpus(corpus: &Corpus, query: &Query) -> bool {
    query.dist.is_deterministic() && corpus.documents.iter().all(|d| d.dist.is_deterministic())
}

/// The already-selected documents, in selection order.
#[derive(Debug, Clone, Default)]
pub struct SelectionState<'a> {
    selected: Vec<&'a Document>,
}

impl<'a> SelectionState<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resolves `ids` against the corpus. Fails on unknown or repeated ids.
    pub fn from_ids<S: AsRef<str>>(corpus: &'a Corpus, ids: &[S]) -> Result<Self, CorpusError> {
        let mut state = Self::new();
        for id in ids {
            let id = id.as_ref();
            let doc = corpus.document(id).ok_or_else(|| {
                CorpusError::ValidationError(format!("unknown document id `{id}`"))
            })?;
            state.push(doc)?;
        }
        Ok(state)
    }

    pub fn push(&mut self, doc: &'a Document) -> Result<(), CorpusError> {
        if self.contains(&doc.id) {
            return Err(CorpusError::ValidationError(format!(
                "document `{}` selected twice",
                doc.id
            )));
        }
        self.selected.push(doc);
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        self.selected.iter().any(|d| d.id == id)
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn documents(&self) -> &[&'a Document] {
        &self.selected
    }

    pub fn ids(&self) -> Vec<String> {
        self.selected.iter().map(|d| d.id.clone()).collect()
    }

    /// First `len` selections.
    pub fn prefix(&self, len: usize) -> SelectionState<'a> {
        Self {
            selected: self.selected[..len].to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryFile {
    id: String,
    dist: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    subtopics: Vec<String>,
    query: EntryFile,
    documents: Vec<EntryFile>,
}

/// Parses and validates a corpus file.
pub fn parse_corpus(text: &str) -> Result<(Corpus, Query), CorpusError> {
    let file: CorpusFile =
        serde_json::from_str(text).map_err(|e| CorpusError::SchemaError(e.to_string()))?;
    let dim = file.subtopics.len();

    if file.query.dist.len() != dim {
        return Err(CorpusError::SchemaError(format!(
            "query `{}`: dist has {} entries, expected {dim}",
            file.query.id,
            file.query.dist.len()
        )));
    }
    let query_dist = SubtopicDistribution::new(file.query.dist)
        .map_err(|e| CorpusError::ValidationError(format!("query `{}`: {e}", file.query.id)))?;
    let query = Query::new(file.query.id, query_dist);

    let mut documents = Vec::with_capacity(file.documents.len());
    for (pos, entry) in file.documents.into_iter().enumerate() {
        if entry.dist.len() != dim {
            return Err(CorpusError::SchemaError(format!(
                "documents[{pos}] (`{}`): dist has {} entries, expected {dim}",
                entry.id,
                entry.dist.len()
            )));
        }
        let dist = SubtopicDistribution::new(entry.dist)
            .map_err(|e| CorpusError::ValidationError(format!("document `{}`: {e}", entry.id)))?;
        documents.push(Document::new(entry.id, dist));
    }

    let corpus = Corpus::new(file.subtopics, documents)?;
    Ok((corpus, query))
}

/// Writes a corpus and its query in the corpus file format.
pub fn serialize_corpus(corpus: &Corpus, query: &Query) -> String {
    let entry = |id: &str, dist: &SubtopicDistribution| EntryFile {
        id: id.to_string(),
        dist: dist.probs().to_vec(),
    };
    let file = CorpusFile {
        subtopics: corpus.subtopics.clone(),
        query: entry(&query.id, &query.dist),
        documents: corpus
            .documents
            .iter()
            .map(|d| entry(&d.id, &d.dist))
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("corpus serialization cannot fail");
    text.push('\n');
    text
}
