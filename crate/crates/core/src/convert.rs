//! NER ⇄ MRC reformulation, SQuAD-style ingestion and the word-substitution hook.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::corpus::{
    spans_to_bio, tags_to_spans, CorpusError, LabelSet, MrcExample, Span, TaggedSentence,
};

const DEFAULT_TEMPLATES: &str = include_str!("../templates/queries.json");

#[derive(Debug, Error)]
pub enum ConvertError {
    #[error("no query template for entity type `{0}`")]
    MissingTemplate(String),
    #[error("invalid query templates: {0}")]
    Template(String),
    #[error("example {id}: {message}")]
    Alignment { id: String, message: String },
    #[error("example {id}: answer offset {start}+{len} exceeds context length {context_len}")]
    OffsetOutOfRange {
        id: String,
        start: usize,
        len: usize,
        context_len: usize,
    },
    #[error("malformed MRC document: {0}")]
    Json(#[from] serde_json::Error),
    #[error("word map line {line}: {message}")]
    WordMap { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// One natural-language query per entity type, in label-set order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryTemplateSet {
    entries: Vec<(String, String)>,
}

impl QueryTemplateSet {
    /// Parses a JSON object `{type: query}` and keeps the entries for `label_set`.
    pub fn from_json(text: &str, label_set: &LabelSet) -> Result<Self, ConvertError> {
        let map: BTreeMap<String, String> = serde_json::from_str(text)?;
        Self::from_map(&map, label_set)
    }

    pub fn from_map(map: &BTreeMap<String, String>, label_set: &LabelSet) -> Result<Self, ConvertError> {
        let mut entries = Vec::with_capacity(label_set.types().len());
        for ty in label_set.types() {
            let query = map
                .get(ty)
                .ok_or_else(|| ConvertError::MissingTemplate(ty.clone()))?
                .trim();
            if query.is_empty() {
                return Err(ConvertError::Template(format!("query for `{ty}` is empty")));
            }
            if let Some((other, _)) = entries.iter().find(|(_, q): &&(String, String)| q == query) {
                return Err(ConvertError::Template(format!(
                    "`{ty}` and `{other}` share the same query"
                )));
            }
            entries.push((ty.clone(), query.to_string()));
        }
        Ok(Self { entries })
    }

    /// Built-in annotation-guideline style descriptions.
    pub fn default_for(label_set: &LabelSet) -> Result<Self, ConvertError> {
        Self::from_json(DEFAULT_TEMPLATES, label_set)
    }

    pub fn query(&self, entity_type: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(t, _)| t == entity_type)
            .map(|(_, q)| q.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(t, q)| (t.as_str(), q.as_str()))
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, &str> = self.iter().collect();
        serde_json::to_string_pretty(&map).expect("string map serializes")
    }
}

/// Reformulates every (sentence, entity type) pair as an MRC example whose
/// answers are that type's spans. Sentences without the type become
/// negative examples with no answers.
pub fn ner_to_mrc(
    dataset: &[TaggedSentence],
    templates: &QueryTemplateSet,
) -> Result<Vec<MrcExample>, ConvertError> {
    let mut out = Vec::with_capacity(dataset.len() * templates.len());
    for sentence in dataset {
        let spans = tags_to_spans(&sentence.tags)?;
        if let Some(span) = spans.iter().find(|s| templates.query(&s.entity_type).is_none()) {
            return Err(ConvertError::MissingTemplate(span.entity_type.clone()));
        }
        for (ty, query) in templates.iter() {
            let answers = spans
                .iter()
                .filter(|s| s.entity_type == ty)
                .map(|s| (s.start, s.end))
                .collect();
            out.push(MrcExample {
                id: format!("{}#{ty}", sentence.id),
                query: query.to_string(),
                context: sentence.tokens.clone(),
                answers,
                entity_type: Some(ty.to_string()),
            });
        }
    }
    Ok(out)
}

/// Same mapping as [`ner_to_mrc`], applied to pseudo-labeled target data.
pub fn pseudo_ner_to_mrc(
    pseudo: &[TaggedSentence],
    templates: &QueryTemplateSet,
) -> Result<Vec<MrcExample>, ConvertError> {
    ner_to_mrc(pseudo, templates)
}

/// Reassembles tagged sentences from [`ner_to_mrc`] output.
///
/// Consecutive examples sharing a sentence id (the part of the id before the
/// final `#`) are merged; each answer becomes a span of the example's type.
pub fn mrc_to_ner(
    examples: &[MrcExample],
    label_set: &LabelSet,
) -> Result<Vec<TaggedSentence>, ConvertError> {
    let mut out: Vec<TaggedSentence> = Vec::new();
    let mut current: Option<(String, Vec<String>, Vec<Span>)> = None;
    for ex in examples {
        let sid = ex.id.rsplit_once('#').map_or(ex.id.as_str(), |(s, _)| s);
        let ty = ex.entity_type.clone().ok_or_else(|| ConvertError::Alignment {
            id: ex.id.clone(),
            message: "example carries no entity type".into(),
        })?;
        let same = matches!(&current, Some((id, ctx, _)) if id == sid && *ctx == ex.context);
        if !same {
            if let Some((id, tokens, spans)) = current.take() {
                out.push(assemble(id, tokens, spans, label_set)?);
            }
            current = Some((sid.to_string(), ex.context.clone(), Vec::new()));
        }
        let (_, _, spans) = current.as_mut().expect("group is open");
        spans.extend(ex.answers.iter().map(|&(s, e)| Span::new(ty.clone(), s, e)));
    }
    if let Some((id, tokens, spans)) = current {
        out.push(assemble(id, tokens, spans, label_set)?);
    }
    Ok(out)
}

fn assemble(
    id: String,
    tokens: Vec<String>,
    mut spans: Vec<Span>,
    label_set: &LabelSet,
) -> Result<TaggedSentence, ConvertError> {
    spans.sort();
    let tags = spans_to_bio(&spans, tokens.len())?;
    Ok(TaggedSentence::new(id, tokens, tags, label_set)?)
}

/// Keeps every answerable example and each no-answer example with
/// probability `keep_ratio`.
pub fn downsample_negatives(examples: &[MrcExample], keep_ratio: f64, seed: u64) -> Vec<MrcExample> {
    if keep_ratio >= 1.0 {
        return examples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    examples
        .iter()
        .filter(|ex| !ex.answers.is_empty() || rng.random::<f64>() < keep_ratio)
        .cloned()
        .collect()
}

/// A token with its character range `[start, end)` in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffsetToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Whitespace-plus-punctuation tokenization with character offsets.
///
/// Whitespace separates tokens; every other non-alphanumeric character is a
/// token on its own.
pub fn tokenize_with_offsets(text: &str) -> Vec<OffsetToken> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut cur_start = 0;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() || !c.is_alphanumeric() {
            if !cur.is_empty() {
                out.push(OffsetToken {
                    text: std::mem::take(&mut cur),
                    start: cur_start,
                    end: i,
                });
            }
            if !c.is_whitespace() {
                out.push(OffsetToken {
                    text: c.to_string(),
                    start: i,
                    end: i + 1,
                });
            }
        } else {
            if cur.is_empty() {
                cur_start = i;
            }
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        let end = text.chars().count();
        out.push(OffsetToken {
            text: cur,
            start: cur_start,
            end,
        });
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

#[derive(Debug, Deserialize)]
struct SquadDocument {
    data: Vec<SquadArticle>,
}

#[derive(Debug, Deserialize)]
struct SquadArticle {
    paragraphs: Vec<SquadParagraph>,
}

#[derive(Debug, Deserialize)]
struct SquadParagraph {
    context: String,
    qas: Vec<SquadQa>,
}

#[derive(Debug, Deserialize)]
struct SquadQa {
    id: String,
    question: String,
    #[serde(default)]
    answers: Vec<SquadAnswer>,
    #[serde(default)]
    is_impossible: bool,
}

#[derive(Debug, Deserialize)]
struct SquadAnswer {
    text: String,
    answer_start: usize,
}

/// Non-fatal alignment notes produced by [`mrc_normalize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentWarning {
    pub id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct NormalizedMrc {
    pub examples: Vec<MrcExample>,
    pub warnings: Vec<AlignmentWarning>,
}

/// Converts a SQuAD-style JSON document into token-level MRC examples.
///
/// Character answers are widened to the smallest covering token span.
pub fn mrc_normalize(raw: &str) -> Result<NormalizedMrc, ConvertError> {
    let doc: SquadDocument = serde_json::from_str(raw)?;
    let mut out = NormalizedMrc::default();
    for paragraph in doc.data.iter().flat_map(|a| &a.paragraphs) {
        let chars: Vec<char> = paragraph.context.chars().collect();
        let tokens = tokenize_with_offsets(&paragraph.context);
        let context: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        for qa in &paragraph.qas {
            let mut answers: Vec<(usize, usize)> = Vec::new();
            if !qa.is_impossible {
                for ans in &qa.answers {
                    let span = align_answer(&qa.id, &chars, &tokens, ans, &mut out.warnings)?;
                    if answers.contains(&span) {
                        continue;
                    }
                    if answers.iter().any(|&(s, e)| s <= span.1 && span.0 <= e) {
                        out.warnings.push(AlignmentWarning {
                            id: qa.id.clone(),
                            message: format!(
                                "dropped answer ({}, {}) overlapping an earlier answer",
                                span.0, span.1
                            ),
                        });
                        continue;
                    }
                    answers.push(span);
                }
            }
            let ex = MrcExample::new(qa.id.clone(), qa.question.clone(), context.clone(), answers, None)
                .map_err(|e| ConvertError::Alignment {
                    id: qa.id.clone(),
                    message: e.to_string(),
                })?;
            out.examples.push(ex);
        }
    }
    for w in &out.warnings {
        log::warn!("{}: {}", w.id, w.message);
    }
    Ok(out)
}

fn align_answer(
    id: &str,
    chars: &[char],
    tokens: &[OffsetToken],
    ans: &SquadAnswer,
    warnings: &mut Vec<AlignmentWarning>,
) -> Result<(usize, usize), ConvertError> {
    let len = ans.text.chars().count();
    let start = ans.answer_start;
    if start + len > chars.len() {
        return Err(ConvertError::OffsetOutOfRange {
            id: id.to_string(),
            start,
            len,
            context_len: chars.len(),
        });
    }
    let found: String = chars[start..start + len].iter().collect();
    if found != ans.text {
        return Err(ConvertError::Alignment {
            id: id.to_string(),
            message: format!(
                "answer text `{}` does not match `{found}` at offset {start}",
                ans.text
            ),
        });
    }
    let end = start + len;
    let covering: Vec<usize> = tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| t.start < end && t.end > start)
        .map(|(i, _)| i)
        .collect();
    let (first, last) = match (covering.first(), covering.last()) {
        (Some(&f), Some(&l)) => (f, l),
        _ => {
            return Err(ConvertError::Alignment {
                id: id.to_string(),
                message: format!("answer `{}` covers no token", ans.text),
            })
        }
    };
    if tokens[first].start != start || tokens[last].end != end {
        warnings.push(AlignmentWarning {
            id: id.to_string(),
            message: format!(
                "answer `{}` does not fall on token boundaries; widened to tokens {first}..={last}",
                ans.text
            ),
        });
    }
    Ok((first, last))
}

/// Source-to-target surface map standing in for a translation system.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordMap {
    entries: HashMap<String, String>,
    pub lowercase_fallback: bool,
}

impl WordMap {
    pub fn new(lowercase_fallback: bool) -> Self {
        Self {
            entries: HashMap::new(),
            lowercase_fallback,
        }
    }

    /// Parses two whitespace-separated columns per line. Blank lines and
    /// lines starting with `#` are skipped; duplicate keys are rejected.
    pub fn parse(text: &str, lowercase_fallback: bool) -> Result<Self, ConvertError> {
        let mut map = Self::new(lowercase_fallback);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(ConvertError::WordMap {
                    line: i + 1,
                    message: format!("expected 2 columns, found {}", cols.len()),
                });
            }
            if !map.insert(cols[0], cols[1]) {
                return Err(ConvertError::WordMap {
                    line: i + 1,
                    message: format!("duplicate entry for `{}`", cols[0]),
                });
            }
        }
        Ok(map)
    }

    /// Returns false if `source` was already mapped.
    pub fn insert(&mut self, source: impl Into<String>, target: impl Into<String>) -> bool {
        let source = source.into();
        if self.entries.contains_key(&source) {
            return false;
        }
        self.entries.insert(source, target.into());
        true
    }

    pub fn lookup(&self, token: &str) -> Option<&str> {
        if let Some(t) = self.entries.get(token) {
            return Some(t);
        }
        if self.lowercase_fallback {
            return self.entries.get(&token.to_lowercase()).map(String::as_str);
        }
        None
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Replaces every mapped token; lengths, ids and tags are untouched.
pub fn substitute_words(dataset: &[TaggedSentence], map: &WordMap) -> Vec<TaggedSentence> {
    dataset
        .iter()
        .map(|s| TaggedSentence {
            id: s.id.clone(),
            tokens: s
                .tokens
                .iter()
                .map(|t| map.lookup(t).unwrap_or(t).to_string())
                .collect(),
            tags: s.tags.clone(),
        })
        .collect()
}
