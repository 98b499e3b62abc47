//! NER and MRC datasets: parsing, validation and the corpus registry.

mod conll;
pub mod io;
mod registry;
mod tags;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conll::{parse_conll, parse_conll_documents, serialize_conll, ConllDocument};
pub use registry::{CorpusRegistry, CorpusRole, Dataset};
pub use tags::{
    repair_bio, spans_to_bio, tags_to_spans, validate_bio, BioVerdict, BioViolation, LabelSet,
    Span, Tag, SPAN_TYPE,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown or malformed tag `{tag}`")]
    Label { line: usize, tag: String },
    #[error("sentence {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("tag sequence is not BIO-valid at index {index}")]
    InvalidBio { index: usize },
    #[error("span ({start}, {end}) lies outside a sequence of length {len}")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("span ({start}, {end}) overlaps another span")]
    OverlappingSpans { start: usize, end: usize },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A token sequence with aligned BIO tags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl TaggedSentence {
    /// Builds a sentence, checking length alignment and BIO validity.
    pub fn new(
        id: impl Into<String>,
        tokens: Vec<String>,
        tags: Vec<Tag>,
        label_set: &LabelSet,
    ) -> Result<Self, CorpusError> {
        let s = Self {
            id: id.into(),
            tokens,
            tags,
        };
        s.validate(label_set)?;
        Ok(s)
    }

    pub fn unlabeled(id: impl Into<String>, tokens: Vec<String>) -> Self {
        let tags = vec![Tag::O; tokens.len()];
        Self {
            id: id.into(),
            tokens,
            tags,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_unlabeled(&self) -> bool {
        self.tags.iter().all(Tag::is_outside)
    }

    pub fn validate(&self, label_set: &LabelSet) -> Result<(), CorpusError> {
        if self.tokens.is_empty() {
            return Err(self.invalid("sentence has no tokens".into()));
        }
        if self.tokens.len() != self.tags.len() {
            return Err(self.invalid(format!(
                "{} tokens but {} tags",
                self.tokens.len(),
                self.tags.len()
            )));
        }
        match validate_bio(&self.tags, label_set) {
            BioVerdict::Valid => Ok(()),
            BioVerdict::Invalid { index, reason } => {
                Err(self.invalid(format!("index {index}: {reason}")))
            }
        }
    }

    fn invalid(&self, message: String) -> CorpusError {
        CorpusError::Invalid {
            id: self.id.clone(),
            message,
        }
    }
}

/// Entity spans of a BIO-valid sentence.
pub fn extract_entities(sentence: &TaggedSentence) -> Result<Vec<Span>, CorpusError> {
    tags_to_spans(&sentence.tags)
}

/// Copies `dataset` with every tag replaced by `O`.
pub fn strip_labels(dataset: &[TaggedSentence]) -> Vec<TaggedSentence> {
    dataset
        .iter()
        .map(|s| TaggedSentence::unlabeled(s.id.clone(), s.tokens.clone()))
        .collect()
}

/// A (query, context, answer spans) reading-comprehension example.
///
/// Answers are inclusive token-index pairs into `context`, sorted and disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MrcExample {
    pub id: String,
    pub query: String,
    pub context: Vec<String>,
    pub answers: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entity_type: Option<String>,
}

impl MrcExample {
    pub fn new(
        id: impl Into<String>,
        query: impl Into<String>,
        context: Vec<String>,
        mut answers: Vec<(usize, usize)>,
        entity_type: Option<String>,
    ) -> Result<Self, CorpusError> {
        answers.sort_unstable();
        answers.dedup();
        let ex = Self {
            id: id.into(),
            query: query.into(),
            context,
            answers,
            entity_type,
        };
        ex.validate()?;
        Ok(ex)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid {
            id: self.id.clone(),
            message,
        };
        if self.context.is_empty() {
            return Err(invalid("empty context".into()));
        }
        for &(s, e) in &self.answers {
            if s > e || e >= self.context.len() {
                return Err(invalid(format!(
                    "answer ({s}, {e}) outside context of length {}",
                    self.context.len()
                )));
            }
        }
        for w in self.answers.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(invalid(format!(
                    "answers ({}, {}) and ({}, {}) overlap",
                    w[0].0, w[0].1, w[1].0, w[1].1
                )));
            }
        }
        Ok(())
    }
}
