//! Helpers shared by the integration and acceptance targets.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tofner::convert::QueryTemplateSet;
use tofner::corpus::{LabelSet, Tag, TaggedSentence};
use tofner::model::{EncoderConfig, HeadKind, ModelParams, ModelState, Vocabulary};
use tofner::pipeline::{Mode, PipelineConfig, StageSettings};
use tofner::synthetic::{SyntheticConfig, SyntheticSuite};

pub const TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

/// Random BIO-valid sentence: tags are written left to right, each token
/// either `O`, a new entity, or (after an entity token) a continuation.
pub fn random_sentence(rng: &mut ChaCha8Rng, id: &str, max_len: usize) -> TaggedSentence {
    let len = rng.random_range(1..=max_len);
    let mut tokens = Vec::with_capacity(len);
    let mut tags = Vec::with_capacity(len);
    let mut open: Option<&str> = None;
    for _ in 0..len {
        tokens.push(format!("w{}", rng.random_range(0..50)));
        let roll = rng.random_range(0..10);
        let tag = match (roll, open) {
            (0..=1, Some(ty)) => Tag::I(ty.to_string()),
            (2..=4, _) => {
                let ty = TYPES[rng.random_range(0..4)];
                open = Some(ty);
                Tag::B(ty.to_string())
            }
            _ => {
                open = None;
                Tag::O
            }
        };
        if tag.is_outside() {
            open = None;
        }
        tags.push(tag);
    }
    TaggedSentence::new(id, tokens, tags, &LabelSet::conll()).expect("generator emits valid BIO")
}

pub fn random_corpus(seed: u64, n: usize, max_len: usize) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_sentence(&mut rng, &format!("s{i}"), max_len)).collect()
}

/// Same tokens with tags redrawn, so gold and prediction disagree at random.
pub fn perturbed(rng: &mut ChaCha8Rng, s: &TaggedSentence) -> TaggedSentence {
    let mut tags = Vec::with_capacity(s.len());
    let mut open: Option<String> = None;
    for t in &s.tags {
        let tag = match rng.random_range(0..6) {
            0 => Tag::O,
            1 => Tag::B(TYPES[rng.random_range(0..4)].to_string()),
            2 => match &open {
                Some(ty) => Tag::I(ty.clone()),
                None => Tag::O,
            },
            _ => match t {
                Tag::I(ty) if open.as_deref() != Some(ty) => Tag::B(ty.clone()),
                other => other.clone(),
            },
        };
        open = tag.entity_type().map(String::from);
        tags.push(tag);
    }
    TaggedSentence::new(s.id.clone(), s.tokens.clone(), tags, &LabelSet::conll()).expect("valid BIO")
}

/// Entity triples read off the tag strings, without the library's span code.
pub fn oracle_spans(tags: &[Tag]) -> BTreeSet<(String, usize, usize)> {
    let strings: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < strings.len() {
        if let Some(ty) = strings[i].strip_prefix("B-") {
            let mut j = i;
            while j + 1 < strings.len() && strings[j + 1] == format!("I-{ty}") {
                j += 1;
            }
            out.insert((ty.to_string(), i, j));
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// `(gold, predicted, correct)` by materializing and intersecting span sets.
pub fn oracle_counts(gold: &[TaggedSentence], pred: &[TaggedSentence]) -> (usize, usize, usize) {
    let (mut g, mut p, mut c) = (0, 0, 0);
    for (gs, ps) in gold.iter().zip(pred) {
        let a = oracle_spans(&gs.tags);
        let b = oracle_spans(&ps.tags);
        g += a.len();
        p += b.len();
        c += a.intersection(&b).count();
    }
    (g, p, c)
}

pub fn oracle_prf(g: usize, p: usize, c: usize) -> (f64, f64, f64) {
    let precision = if p == 0 { 0.0 } else { c as f64 / p as f64 };
    let recall = if g == 0 { 0.0 } else { c as f64 / g as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn templates() -> QueryTemplateSet {
    QueryTemplateSet::default_for(&LabelSet::conll()).unwrap()
}

/// Small state with both task heads attached.
pub fn head_state(seed: u64, words: &[String]) -> ModelState {
    let cfg = EncoderConfig {
        d_model: 8,
        layers: 1,
        ff_width: 12,
        max_positions: 64,
        tie_mlm_weights: false,
    };
    let queries: Vec<String> = templates().iter().flat_map(|(_, q)| tofner::convert::tokenize(q)).collect();
    let vocab = Vocabulary::build(words.iter().chain(&queries).map(String::as_str));
    let mut state = ModelState::new(cfg, vocab.into(), LabelSet::conll(), seed);
    state.ensure_head(HeadKind::Ner, seed + 1);
    state.ensure_head(HeadKind::Mrc, seed + 2);
    state
}

pub fn head_tensors(p: &ModelParams) -> Vec<String> {
    p.tensors()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| n.starts_with("ner.") || n.starts_with("mrc."))
        .collect()
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every entry of the named head tensors.
pub fn max_fd_error(
    state: &ModelState,
    analytic: &ModelParams,
    names: &[&str],
    loss: &dyn Fn(&ModelState) -> f64,
) -> f64 {
    let eps = 1e-5;
    let grads = analytic.tensors();
    let mut worst: f64 = 0.0;
    for name in names {
        let g = &grads.iter().find(|(n, _)| n == name).expect("tensor exists").1;
        for idx in 0..g.len() {
            let (r, c) = (idx / g.ncols(), idx % g.ncols());
            let bump = |delta: f64| {
                let mut s = state.clone();
                let mut ts = s.params.tensors_mut();
                let t = &mut ts.iter_mut().find(|(n, _)| n == name).unwrap().1;
                t[[r, c]] += delta;
                loss(&s)
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            let a = g[[r, c]];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max(err);
        }
    }
    worst
}

/// Tiny corpora for pipeline plumbing tests.
pub fn tiny_suite() -> SyntheticSuite {
    SyntheticSuite::generate(&SyntheticConfig {
        seed: 7,
        source_labeled: 16,
        source_unlabeled: 16,
        target_unlabeled: 12,
        target_test: 4,
        mrc_sentences: 4,
    })
    .unwrap()
}

/// Narrow encoder and one epoch per stage.
pub fn tiny_config(mode: Mode, iterations: u32) -> PipelineConfig {
    let mut c = PipelineConfig::desk();
    c.mode = mode;
    c.iterations = iterations;
    c.encoder = EncoderConfig {
        d_model: 8,
        layers: 1,
        ff_width: 16,
        max_positions: 64,
        tie_mlm_weights: true,
    };
    c.masking.k = 2;
    for s in [
        &mut c.mlm,
        &mut c.mrc,
        &mut c.ner,
        &mut c.ner_pseudo,
        &mut c.loop_mrc,
        &mut c.loop_ner,
    ] {
        *s = StageSettings {
            epochs: Some(1),
            ..*s
        };
    }
    c
}

/// Expected `(stage, source tag, produced tag)` rows, spelled out per mode
/// for two loop iterations.
pub fn golden_trace(mode: Mode) -> Vec<(&'static str, Option<&'static str>, Option<&'static str>)> {
    let base = vec![
        ("MLM", Some("theta_0"), Some("theta_mlm")),
        ("MRC", Some("theta_mlm"), Some("theta_mrc")),
        ("NER", Some("theta_mrc"), Some("theta_ner")),
        ("PSEUDO_GEN", Some("theta_ner"), None),
        ("NER_PSEUDO", Some("theta_ner"), Some("theta_ner^(0)")),
    ];
    match mode {
        Mode::Tof => {
            let mut t = base;
            t.extend([
                ("REFRESH", Some("theta_ner^(0)"), None),
                ("MRC_LOOP_1", Some("theta_ner^(0)"), Some("theta_mrc^(1)")),
                ("NER_LOOP_1", Some("theta_mrc^(1)"), Some("theta_ner^(1)")),
                ("REFRESH_1", Some("theta_ner^(1)"), None),
                ("MRC_LOOP_2", Some("theta_ner^(1)"), Some("theta_mrc^(2)")),
                ("NER_LOOP_2", Some("theta_mrc^(2)"), Some("theta_ner^(2)")),
                ("REFRESH_2", Some("theta_ner^(2)"), None),
                ("PREDICT", Some("theta_ner^(2)"), None),
            ]);
            t
        }
        Mode::TofNoContinual => {
            let mut t = base;
            t.push(("PREDICT", Some("theta_ner^(0)"), None));
            t
        }
        Mode::TofMrcOnly => vec![
            ("MLM", Some("theta_0"), Some("theta_mlm")),
            ("MRC", Some("theta_mlm"), Some("theta_mrc")),
            ("NER", Some("theta_mrc"), Some("theta_ner")),
            ("PREDICT", Some("theta_ner"), None),
        ],
        Mode::AdaptabertBaseline => vec![
            ("MLM", Some("theta_0"), Some("theta_mlm")),
            ("NER", Some("theta_mlm"), Some("theta_ner")),
            ("PREDICT", Some("theta_ner"), None),
        ],
    }
}

/// The trace's handoff rows rendered as strings.
pub fn observed_trace(trace: &tofner::pipeline::PipelineTrace) -> Vec<(String, Option<String>, Option<String>)> {
    trace
        .handoffs()
        .into_iter()
        .map(|(s, a, b)| (s.to_string(), a.map(|t| t.to_string()), b.map(|t| t.to_string())))
        .collect()
}

pub fn golden_strings(mode: Mode) -> Vec<(String, Option<String>, Option<String>)> {
    golden_trace(mode)
        .into_iter()
        .map(|(s, a, b)| (s.to_string(), a.map(String::from), b.map(String::from)))
        .collect()
}
