//! Static masked-language-model instances for domain/language tuning.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaggedSentence;
use crate::model::vocab::{is_special, MASK};

#[derive(Debug, Error, PartialEq)]
pub enum MaskingError {
    #[error("sentence {0} is empty")]
    EmptySentence(String),
    #[error("invalid masking parameters: {0}")]
    Params(String),
    #[error("the target unlabeled set is empty")]
    EmptyTarget,
}

/// How a selected position is corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub mask: f64,
    pub random: f64,
    pub keep: f64,
}

impl Default for MaskPolicy {
    fn default() -> Self {
        Self {
            mask: 0.8,
            random: 0.1,
            keep: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskingParams {
    /// Variants generated per sentence.
    pub k: usize,
    /// Fraction of eligible positions selected per variant.
    pub rate: f64,
    pub policy: MaskPolicy,
}

impl Default for MaskingParams {
    fn default() -> Self {
        Self {
            k: 10,
            rate: 0.15,
            policy: MaskPolicy::default(),
        }
    }
}

impl MaskingParams {
    pub fn validate(&self) -> Result<(), MaskingError> {
        if self.k == 0 {
            return Err(MaskingError::Params("k must be at least 1".into()));
        }
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(MaskingError::Params(format!("rate {} not in (0, 1)", self.rate)));
        }
        let p = self.policy;
        if [p.mask, p.random, p.keep].iter().any(|x| !(0.0..=1.0).contains(x))
            || ((p.mask + p.random + p.keep) - 1.0).abs() > 1e-9
        {
            return Err(MaskingError::Params(format!(
                "mask/random/keep split {}/{}/{} must be non-negative and sum to 1",
                p.mask, p.random, p.keep
            )));
        }
        Ok(())
    }
}

/// One masked variant of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedInstance {
    pub sentence_id: String,
    pub variant: usize,
    pub tokens: Vec<String>,
    /// Selected position → original token.
    pub targets: BTreeMap<usize, String>,
}

/// Number of positions selected out of `eligible`.
pub fn selection_count(eligible: usize, rate: f64) -> usize {
    if eligible == 0 {
        0
    } else {
        ((rate * eligible as f64).round() as usize).clamp(1, eligible)
    }
}

/// Draws `params.k` independent maskings of `sentence`.
///
/// Random replacements are drawn from `replacement_pool`; with an empty pool
/// they fall back to the mask token.
pub fn generate_maskings(
    sentence: &TaggedSentence,
    params: &MaskingParams,
    replacement_pool: &[String],
    seed: u64,
) -> Result<Vec<MaskedInstance>, MaskingError> {
    params.validate()?;
    if sentence.tokens.is_empty() {
        return Err(MaskingError::EmptySentence(sentence.id.clone()));
    }
    let eligible: Vec<usize> = (0..sentence.tokens.len())
        .filter(|&i| !is_special(&sentence.tokens[i]))
        .collect();
    let n = selection_count(eligible.len(), params.rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(params.k);
    for variant in 0..params.k {
        let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), n)
            .into_iter()
            .map(|i| eligible[i])
            .collect();
        picked.sort_unstable();
        let mut tokens = sentence.tokens.clone();
        let mut targets = BTreeMap::new();
        for pos in picked {
            let u: f64 = rng.random();
            if u < params.policy.mask {
                tokens[pos] = MASK.to_string();
            } else if u < params.policy.mask + params.policy.random {
                tokens[pos] = match replacement_pool {
                    [] => MASK.to_string(),
                    pool => pool[rng.random_range(0..pool.len())].clone(),
                };
            }
            targets.insert(pos, sentence.tokens[pos].clone());
        }
        out.push(MaskedInstance {
            sentence_id: sentence.id.clone(),
            variant,
            tokens,
            targets,
        });
    }
    Ok(out)
}

/// Masks every sentence of a corpus. Sentence `i` uses seed `seed ^ i`, so
/// the result does not depend on processing order.
pub fn mask_corpus(
    sentences: &[TaggedSentence],
    params: &MaskingParams,
    replacement_pool: &[String],
    seed: u64,
) -> Result<Vec<MaskedInstance>, MaskingError> {
    let mut out = Vec::with_capacity(sentences.len() * params.k);
    for (i, s) in sentences.iter().enumerate() {
        out.extend(generate_maskings(s, params, replacement_pool, seed ^ i as u64)?);
    }
    Ok(out)
}

/// All target sentences plus an equal-sized uniform sample of the source
/// (the whole source when it is smaller), shuffled by `seed`.
pub fn build_mlm_corpus(
    target_unlabeled: &[TaggedSentence],
    source_unlabeled: &[TaggedSentence],
    seed: u64,
) -> Result<Vec<TaggedSentence>, MaskingError> {
    if target_unlabeled.is_empty() {
        return Err(MaskingError::EmptyTarget);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let take = source_unlabeled.len().min(target_unlabeled.len());
    let mut picked = index::sample(&mut rng, source_unlabeled.len(), take).into_vec();
    picked.sort_unstable();
    let mut out: Vec<TaggedSentence> = target_unlabeled.to_vec();
    out.extend(picked.into_iter().map(|i| source_unlabeled[i].clone()));
    out.shuffle(&mut rng);
    Ok(out)
}
