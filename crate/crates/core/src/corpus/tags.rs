//! BIO tags, label sets and the span view of a tag sequence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::CorpusError;

/// The pseudo-type used for entity span detection corpora (WNUT16 style).
pub const SPAN_TYPE: &str = "SPAN";

/// A single BIO label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }

    pub fn is_outside(&self) -> bool {
        matches!(self, Tag::O)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for Tag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, ty) = s
            .split_once('-')
            .ok_or_else(|| format!("malformed tag `{s}`"))?;
        if ty.is_empty() {
            return Err(format!("malformed tag `{s}`"));
        }
        match prefix {
            "B" => Ok(Tag::B(ty.to_string())),
            "I" => Ok(Tag::I(ty.to_string())),
            _ => Err(format!("malformed tag `{s}`")),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered set of entity types under the BIO scheme.
///
/// The tag vocabulary is `O` followed by `B-T`, `I-T` for each type in order,
/// so its size is always `2 * types + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    types: Vec<String>,
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::conll()
    }
}

impl LabelSet {
    pub fn new<I, S>(types: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for t in types {
            let t = t.into();
            if t.is_empty() || t.contains(char::is_whitespace) || t == "O" {
                return Err(CorpusError::Config(format!("invalid entity type name `{t}`")));
            }
            if out.contains(&t) {
                return Err(CorpusError::Config(format!("duplicate entity type `{t}`")));
            }
            out.push(t);
        }
        if out.is_empty() {
            return Err(CorpusError::Config("label set has no entity types".into()));
        }
        Ok(Self { types: out })
    }

    /// PER, LOC, ORG, MISC.
    pub fn conll() -> Self {
        Self {
            types: ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
        }
    }

    /// Single-type variant used for entity span detection.
    pub fn span_detection() -> Self {
        Self {
            types: vec![SPAN_TYPE.to_string()],
        }
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn contains(&self, ty: &str) -> bool {
        self.types.iter().any(|t| t == ty)
    }

    pub fn num_tags(&self) -> usize {
        2 * self.types.len() + 1
    }

    pub fn tag_vocabulary(&self) -> Vec<Tag> {
        let mut out = Vec::with_capacity(self.num_tags());
        out.push(Tag::O);
        for t in &self.types {
            out.push(Tag::B(t.clone()));
            out.push(Tag::I(t.clone()));
        }
        out
    }

    /// Index of `tag` in [`LabelSet::tag_vocabulary`].
    pub fn tag_index(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::O => Some(0),
            Tag::B(t) => self.types.iter().position(|x| x == t).map(|i| 1 + 2 * i),
            Tag::I(t) => self.types.iter().position(|x| x == t).map(|i| 2 + 2 * i),
        }
    }

    pub fn tag_at(&self, index: usize) -> Option<Tag> {
        if index == 0 {
            return Some(Tag::O);
        }
        let ty = self.types.get((index - 1) / 2)?.clone();
        Some(if index % 2 == 1 { Tag::B(ty) } else { Tag::I(ty) })
    }
}

/// Result of [`validate_bio`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BioVerdict {
    Valid,
    Invalid { index: usize, reason: BioViolation },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BioViolation {
    /// The tag names a type outside the label set.
    UnknownType(String),
    /// `I-T` without a preceding `B-T` or `I-T`.
    OrphanInside,
    /// `I-T` following a span of a different type.
    TypeSwitch { previous: String },
}

impl BioVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, BioVerdict::Valid)
    }

    pub fn first_violation(&self) -> Option<usize> {
        match self {
            BioVerdict::Valid => None,
            BioVerdict::Invalid { index, .. } => Some(*index),
        }
    }
}

impl fmt::Display for BioViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioViolation::UnknownType(t) => write!(f, "unknown entity type `{t}`"),
            BioViolation::OrphanInside => f.write_str("I- tag without an open span"),
            BioViolation::TypeSwitch { previous } => {
                write!(f, "I- tag continues a span of type `{previous}`")
            }
        }
    }
}

pub fn validate_bio(tags: &[Tag], label_set: &LabelSet) -> BioVerdict {
    let mut prev: Option<&Tag> = None;
    for (i, tag) in tags.iter().enumerate() {
        if let Some(ty) = tag.entity_type() {
            if !label_set.contains(ty) {
                return BioVerdict::Invalid {
                    index: i,
                    reason: BioViolation::UnknownType(ty.to_string()),
                };
            }
        }
        if let Tag::I(ty) = tag {
            match prev.and_then(Tag::entity_type) {
                None => {
                    return BioVerdict::Invalid {
                        index: i,
                        reason: BioViolation::OrphanInside,
                    }
                }
                Some(p) if p != ty => {
                    return BioVerdict::Invalid {
                        index: i,
                        reason: BioViolation::TypeSwitch {
                            previous: p.to_string(),
                        },
                    }
                }
                Some(_) => {}
            }
        }
        prev = Some(tag);
    }
    BioVerdict::Valid
}

/// Rewrites every `I-T` that does not continue a `T` span into `B-T`.
///
/// Turns IOB1 input (and any other structurally broken sequence) into strict BIO.
pub fn repair_bio(tags: &mut [Tag]) {
    for i in 0..tags.len() {
        let continues = match (&tags[i], i.checked_sub(1).map(|p| &tags[p])) {
            (Tag::I(ty), Some(prev)) => prev.entity_type() == Some(ty.as_str()),
            (Tag::I(_), None) => false,
            _ => true,
        };
        if !continues {
            if let Tag::I(ty) = &tags[i] {
                tags[i] = Tag::B(ty.clone());
            }
        }
    }
}

/// A typed entity occupying tokens `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: String,
}

impl Span {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            start,
            end,
            entity_type: entity_type.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Maximal B-then-I runs of a structurally valid tag sequence, in order.
///
/// Fails with [`CorpusError::InvalidBio`] if an `I-` tag does not continue a
/// span of its own type.
pub fn tags_to_spans(tags: &[Tag]) -> Result<Vec<Span>, CorpusError> {
    let mut spans: Vec<Span> = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => spans.extend(open.take()),
            Tag::B(ty) => {
                spans.extend(open.take());
                open = Some(Span::new(ty.clone(), i, i));
            }
            Tag::I(ty) => match open.as_mut() {
                Some(span) if &span.entity_type == ty => span.end = i,
                _ => return Err(CorpusError::InvalidBio { index: i }),
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Inverse of [`tags_to_spans`]. Spans must be in range and pairwise disjoint.
pub fn spans_to_bio(spans: &[Span], len: usize) -> Result<Vec<Tag>, CorpusError> {
    let mut tags = vec![Tag::O; len];
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(CorpusError::SpanOutOfRange {
                start: span.start,
                end: span.end,
                len,
            });
        }
        if tags[span.start..=span.end].iter().any(|t| !t.is_outside()) {
            return Err(CorpusError::OverlappingSpans {
                start: span.start,
                end: span.end,
            });
        }
        tags[span.start] = Tag::B(span.entity_type.clone());
        for t in &mut tags[span.start + 1..=span.end] {
            *t = Tag::I(span.entity_type.clone());
        }
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn validate_examples() {
        let ls = LabelSet::conll();
        assert!(validate_bio(&tags("B-PER I-PER O"), &ls).is_valid());
        assert_eq!(validate_bio(&tags("O I-LOC"), &ls).first_violation(), Some(1));
        let v = validate_bio(&tags("B-PER I-ORG"), &ls);
        assert_eq!(v.first_violation(), Some(1));
        assert!(matches!(
            v,
            BioVerdict::Invalid {
                reason: BioViolation::TypeSwitch { .. },
                ..
            }
        ));
        assert!(matches!(
            validate_bio(&tags("B-DATE"), &ls),
            BioVerdict::Invalid {
                index: 0,
                reason: BioViolation::UnknownType(_)
            }
        ));
    }

    #[test]
    fn extract_examples() {
        assert_eq!(
            tags_to_spans(&tags("B-PER I-PER O B-LOC")).unwrap(),
            vec![Span::new("PER", 0, 1), Span::new("LOC", 3, 3)]
        );
        assert!(tags_to_spans(&tags("O O O")).unwrap().is_empty());
        assert_eq!(
            tags_to_spans(&tags("B-ORG B-ORG")).unwrap(),
            vec![Span::new("ORG", 0, 0), Span::new("ORG", 1, 1)]
        );
        assert!(matches!(
            tags_to_spans(&tags("O I-PER")),
            Err(CorpusError::InvalidBio { index: 1 })
        ));
    }

    #[test]
    fn tag_vocabulary_sizes() {
        assert_eq!(LabelSet::conll().num_tags(), 9);
        assert_eq!(LabelSet::conll().tag_vocabulary().len(), 9);
        assert_eq!(LabelSet::span_detection().num_tags(), 3);
        let ls = LabelSet::conll();
        for (i, t) in ls.tag_vocabulary().iter().enumerate() {
            assert_eq!(ls.tag_index(t), Some(i));
            assert_eq!(ls.tag_at(i).as_ref(), Some(t));
        }
    }

    #[test]
    fn repair_normalizes_iob1() {
        let mut t = tags("I-PER I-PER O I-LOC B-LOC I-ORG");
        repair_bio(&mut t);
        assert_eq!(t, tags("B-PER I-PER O B-LOC B-LOC B-ORG"));
    }

    #[test]
    fn spans_to_bio_rejects_overlap() {
        let spans = [Span::new("PER", 0, 2), Span::new("LOC", 2, 3)];
        assert!(matches!(
            spans_to_bio(&spans, 5),
            Err(CorpusError::OverlappingSpans { .. })
        ));
        assert!(spans_to_bio(&[Span::new("PER", 3, 5)], 5).is_err());
    }

    #[test]
    fn tag_parse_rejects_garbage() {
        assert!("X-PER".parse::<Tag>().is_err());
        assert!("B-".parse::<Tag>().is_err());
        assert!("PER".parse::<Tag>().is_err());
        assert_eq!("I-MISC".parse::<Tag>().unwrap(), Tag::I("MISC".into()));
    }
}
