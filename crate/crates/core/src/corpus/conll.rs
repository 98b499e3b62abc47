//! CoNLL column format: one token per line, tag in the final column,
//! blank lines between sentences.

use std::fmt::Write;

use super::{repair_bio, CorpusError, LabelSet, Tag, TaggedSentence};

const DOCSTART: &str = "-DOCSTART-";

/// Parsed CoNLL file with document boundaries kept as sentence indices.
#[derive(Debug, Clone, Default)]
pub struct ConllDocument {
    pub sentences: Vec<TaggedSentence>,
    /// Index of the first sentence of each `-DOCSTART-` delimited document.
    pub document_starts: Vec<usize>,
}

/// Parses CoNLL text into BIO-valid sentences.
///
/// `source` names the input and is used to build sentence ids (`source:ordinal`).
pub fn parse_conll(
    text: &str,
    label_set: &LabelSet,
    source: &str,
) -> Result<Vec<TaggedSentence>, CorpusError> {
    parse_conll_documents(text, label_set, source).map(|d| d.sentences)
}

pub fn parse_conll_documents(
    text: &str,
    label_set: &LabelSet,
    source: &str,
) -> Result<ConllDocument, CorpusError> {
    let mut doc = ConllDocument::default();
    let mut columns: Option<usize> = None;
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();

    let flush = |tokens: &mut Vec<String>, tags: &mut Vec<Tag>, doc: &mut ConllDocument| {
        if tokens.is_empty() {
            return;
        }
        repair_bio(tags);
        let id = format!("{source}:{}", doc.sentences.len());
        doc.sentences.push(TaggedSentence {
            id,
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
        });
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            flush(&mut tokens, &mut tags, &mut doc);
            continue;
        }
        if fields[0] == DOCSTART {
            flush(&mut tokens, &mut tags, &mut doc);
            doc.document_starts.push(doc.sentences.len());
            continue;
        }
        if fields.len() < 2 {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "expected a token and a tag column".into(),
            });
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(n) if n != fields.len() => {
                return Err(CorpusError::Parse {
                    line: line_no,
                    message: format!("expected {n} columns, found {}", fields.len()),
                })
            }
            Some(_) => {}
        }
        let raw = fields[fields.len() - 1];
        let tag: Tag = raw.parse().map_err(|_| CorpusError::Label {
            line: line_no,
            tag: raw.to_string(),
        })?;
        if let Some(ty) = tag.entity_type() {
            if !label_set.contains(ty) {
                return Err(CorpusError::Label {
                    line: line_no,
                    tag: raw.to_string(),
                });
            }
        }
        tokens.push(fields[0].to_string());
        tags.push(tag);
    }
    flush(&mut tokens, &mut tags, &mut doc);
    Ok(doc)
}

/// Writes sentences as two-column CoNLL (`token tag`).
pub fn serialize_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (tok, tag) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{tok} {tag}");
        }
        out.push('\n');
    }
    out
}
