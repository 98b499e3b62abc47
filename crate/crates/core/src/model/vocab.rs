use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

pub const SPECIAL_TOKENS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];

pub fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

/// Word-level vocabulary: special tokens first, then the remaining tokens in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a, I>(tokens: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let words: BTreeSet<&str> = tokens.into_iter().filter(|t| !is_special(t)).collect();
        let all: Vec<String> = SPECIAL_TOKENS
            .iter()
            .copied()
            .chain(words)
            .map(String::from)
            .collect();
        Self::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, falling back to `[UNK]`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.index[UNK])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-special entries, used as the random-replacement pool for masking.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over the newline-joined entries.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(mut tokens: Vec<String>) -> Self {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                tokens.retain(|t| t != s);
                tokens.insert(i, s.to_string());
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        tokens.retain(|t| {
            if index.contains_key(t) {
                false
            } else {
                index.insert(t.clone(), index.len());
                true
            }
        });
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_first_and_unknown_fallback() {
        let v = Vocabulary::build(["b", "a", "b", "[MASK]"]);
        assert_eq!(v.len(), 7);
        assert_eq!(&v.tokens()[..5], &SPECIAL_TOKENS.map(String::from));
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.id("a"), 5);
        assert_eq!(v.id("zzz"), v.id(UNK));
    }

    #[test]
    fn hash_is_order_sensitive_and_stable() {
        let a = Vocabulary::build(["x", "y"]);
        let b = Vocabulary::build(["y", "x"]);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Vocabulary::build(["x"]).hash());
        let json = serde_json::to_string(&a).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
