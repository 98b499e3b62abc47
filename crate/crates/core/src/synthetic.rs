//! Deterministic cue-word corpora.
//!
//! Every entity is preceded by a marker token naming its type, entity names
//! come from one pool shared by all types and both domains, and the filler
//! words around them differ between the source and the target domain. A
//! model that learns to read the markers tags both domains correctly.

use std::fs;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convert::{ner_to_mrc, ConvertError, QueryTemplateSet};
use crate::corpus::io::{to_jsonl, write_atomic};
use crate::corpus::{
    serialize_conll, spans_to_bio, CorpusError, CorpusRegistry, CorpusRole, LabelSet, MrcExample,
    Span, TaggedSentence,
};

const CUES: [(&str, [&str; 2]); 4] = [
    ("PER", ["mister", "madam"]),
    ("LOC", ["city", "river"]),
    ("ORG", ["company", "agency"]),
    ("MISC", ["festival", "brand"]),
];

const NAME_ONSETS: [&str; 8] = ["ka", "zo", "mi", "tal", "ver", "quo", "bri", "sel"];
const NAME_CODAS: [&str; 6] = ["rin", "dax", "lo", "mek", "vus", "ten"];

const SOURCE_FILLER: [&str; 48] = [
    "the", "report", "said", "on", "monday", "that", "shares", "rose", "after", "talks",
    "with", "officials", "were", "held", "and", "a", "spokesman", "told", "reporters", "market",
    "prices", "fell", "sharply", "today", "government", "minister", "week", "year", "percent", "police",
    "last", "its", "would", "by", "from", "over", "trade", "economic", "analysts", "group",
    "under", "plan", "expected", "statement", "added", "leaders", "during", "foreign",
];

const TARGET_FILLER: [&str; 48] = [
    "lol", "just", "saw", "omg", "gonna", "watch", "tonight", "so", "happy", "cant",
    "wait", "for", "haha", "best", "day", "ever", "follow", "me", "pls", "love",
    "this", "song", "rt", "yay", "wow", "cool", "smh", "tbh", "idk", "fam",
    "vibes", "super", "bored", "hungry", "sleepy", "dude", "bro", "cute", "literally", "totally",
    "awesome", "retweet", "new", "tmrw", "nah", "yeah", "wanna", "gotta",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    fn filler(self) -> &'static [&'static str] {
        match self {
            Domain::Source => &SOURCE_FILLER,
            Domain::Target => &TARGET_FILLER,
        }
    }
}

/// Sizes of the generated splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub source_labeled: usize,
    pub source_unlabeled: usize,
    pub target_unlabeled: usize,
    pub target_test: usize,
    /// Sentences per domain turned into labeled MRC examples.
    pub mrc_sentences: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 2019,
            source_labeled: 400,
            source_unlabeled: 400,
            target_unlabeled: 200,
            target_test: 200,
            mrc_sentences: 60,
        }
    }
}

/// All corpora of one synthetic transfer setting. `t_ner_unlabeled` keeps
/// its gold tags so predictions on it can be scored.
#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub label_set: LabelSet,
    pub s_ner: Vec<TaggedSentence>,
    pub s_ner_unlabeled: Vec<TaggedSentence>,
    pub t_ner_unlabeled: Vec<TaggedSentence>,
    pub t_test: Vec<TaggedSentence>,
    pub s_mrc: Vec<MrcExample>,
    pub t_mrc: Vec<MrcExample>,
}

/// Pool of two-syllable names, identical for every type and domain.
pub fn name_pool() -> Vec<String> {
    NAME_ONSETS
        .iter()
        .flat_map(|o| NAME_CODAS.iter().map(move |c| format!("{o}{c}")))
        .collect()
}

pub fn cue_words(entity_type: &str) -> Option<[&'static str; 2]> {
    CUES.iter().find(|(t, _)| *t == entity_type).map(|(_, c)| *c)
}

/// One sentence: filler runs with one to three marked entities.
pub fn generate_sentence(
    id: impl Into<String>,
    domain: Domain,
    rng: &mut ChaCha8Rng,
    label_set: &LabelSet,
) -> TaggedSentence {
    let names = name_pool();
    let filler = domain.filler();
    let types: Vec<&'static str> = CUES.iter().map(|(t, _)| *t).collect();
    let mut tokens: Vec<String> = Vec::new();
    let mut spans = Vec::new();
    let push_filler = |tokens: &mut Vec<String>, rng: &mut ChaCha8Rng, lo: usize, hi: usize| {
        for _ in 0..rng.random_range(lo..=hi) {
            tokens.push(filler.choose(rng).expect("filler is non-empty").to_string());
        }
    };
    let entities = rng.random_range(1..=3);
    push_filler(&mut tokens, rng, 0, 3);
    for k in 0..entities {
        let ty = *types.choose(rng).expect("types are non-empty");
        let cue = cue_words(ty).expect("known type")[rng.random_range(0..2)];
        tokens.push(cue.to_string());
        let start = tokens.len();
        for _ in 0..rng.random_range(1..=2) {
            tokens.push(names.choose(rng).expect("names are non-empty").clone());
        }
        spans.push(Span::new(ty, start, tokens.len() - 1));
        let min_gap = usize::from(k + 1 < entities);
        push_filler(&mut tokens, rng, min_gap, 3);
    }
    let tags = spans_to_bio(&spans, tokens.len()).expect("generated spans are disjoint");
    TaggedSentence::new(id, tokens, tags, label_set).expect("generated tags are BIO-valid")
}

pub fn generate_sentences(
    prefix: &str,
    domain: Domain,
    count: usize,
    seed: u64,
) -> Vec<TaggedSentence> {
    let ls = LabelSet::conll();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| generate_sentence(format!("{prefix}:{i}"), domain, &mut rng, &ls))
        .collect()
}

impl SyntheticSuite {
    pub fn generate(cfg: &SyntheticConfig) -> Result<Self, ConvertError> {
        let label_set = LabelSet::conll();
        let templates = QueryTemplateSet::default_for(&label_set)?;
        let split = |name: &str, domain, count, salt: u64| {
            generate_sentences(name, domain, count, cfg.seed.wrapping_mul(31).wrapping_add(salt))
        };
        let s_mrc_src = split("s_mrc", Domain::Source, cfg.mrc_sentences, 5);
        let t_mrc_src = split("t_mrc", Domain::Target, cfg.mrc_sentences, 6);
        Ok(Self {
            s_ner: split("s_ner", Domain::Source, cfg.source_labeled, 1),
            s_ner_unlabeled: split("s_ner_unlabeled", Domain::Source, cfg.source_unlabeled, 2),
            t_ner_unlabeled: split("t_ner_unlabeled", Domain::Target, cfg.target_unlabeled, 3),
            t_test: split("t_test", Domain::Target, cfg.target_test, 4),
            s_mrc: ner_to_mrc(&s_mrc_src, &templates)?,
            t_mrc: ner_to_mrc(&t_mrc_src, &templates)?,
            label_set,
        })
    }

    /// Registers every input role the full pipeline consumes.
    pub fn registry(&self) -> Result<CorpusRegistry, CorpusError> {
        let mut reg = CorpusRegistry::new();
        reg.insert_ner(CorpusRole::SNer, self.s_ner.clone())?;
        reg.insert_ner(CorpusRole::SNerUnlabeled, self.s_ner_unlabeled.clone())?;
        reg.insert_ner(CorpusRole::TNerUnlabeled, self.t_ner_unlabeled.clone())?;
        reg.insert_mrc(CorpusRole::SMrc, self.s_mrc.clone())?;
        reg.insert_mrc(CorpusRole::TMrc, self.t_mrc.clone())?;
        Ok(reg)
    }

    /// Writes CoNLL files for the NER splits and line-JSON for MRC.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let conll = [
            ("s_ner.conll", &self.s_ner),
            ("s_ner_unlabeled.conll", &self.s_ner_unlabeled),
            ("t_ner_unlabeled.conll", &self.t_ner_unlabeled),
            ("t_test.conll", &self.t_test),
        ];
        for (name, data) in conll {
            write_atomic(&dir.join(name), serialize_conll(data).as_bytes())?;
        }
        write_atomic(&dir.join("s_mrc.jsonl"), to_jsonl(&self.s_mrc).as_bytes())?;
        write_atomic(&dir.join("t_mrc.jsonl"), to_jsonl(&self.t_mrc).as_bytes())?;
        Ok(())
    }
}
