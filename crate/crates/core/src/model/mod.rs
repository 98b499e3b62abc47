//! Encoder, task heads, decoding and staged training.
//!
//! [`ModelState`] bundles the encoder parameters with whichever heads have
//! been attached so far, plus a [`StageTag`] recording which point of the
//! fine-tuning chain the parameters belong to. Stages hand the whole state
//! on, so a head trained in one stage is still present in the next.

pub mod checkpoint;
mod decode;
mod encoder;
mod heads;
pub mod params;
mod train;
pub mod vocab;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::convert::tokenize;
use crate::corpus::{LabelSet, MrcExample, Tag};
use crate::masking::MaskedInstance;

pub use decode::{mrc_decode, mrc_decode_tables, ner_decode};
pub use encoder::softmax_rows;
pub use heads::{boundary_flags, mrc_loss, ner_loss};
pub use params::{EncoderConfig, EncoderParams, MlmHead, ModelParams, MrcHead, NerHead};
pub use train::{train_stage, Hyperparams, LossCurve, TrainData};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("the model has no {0} head")]
    MissingHead(HeadKind),
    #[error("expected {expected} items, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("tag `{0}` is not in the label set")]
    UnknownTag(String),
    #[error("tag index {0} is outside the tag vocabulary")]
    TagOutOfRange(usize),
    #[error("answer ({start}, {end}) lies outside a context of length {len}")]
    AnswerOutOfRange { start: usize, end: usize, len: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("cannot hand parameters from {from} to {to}")]
    InvalidHandoff { from: StageTag, to: StageTag },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Mlm,
    Mrc,
    Ner,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadKind::Mlm => "MLM",
            HeadKind::Mrc => "MRC",
            HeadKind::Ner => "NER",
        })
    }
}

/// Which parameter set of the fine-tuning chain a state holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StageTag {
    /// Initial encoder weights.
    Initial,
    Mlm,
    Mrc,
    Ner,
    /// NER parameters after pseudo-label round `i` (0 = the pseudo-data stage).
    NerIter(u32),
    /// MRC parameters of continual-learning round `i >= 1`.
    MrcIter(u32),
}

impl StageTag {
    /// Whether `next` may be initialized from `self`.
    pub fn can_hand_to(self, next: StageTag) -> bool {
        use StageTag::*;
        match (self, next) {
            (Initial, Mlm) | (Mlm, Mrc) | (Mlm, Ner) | (Mrc, Ner) | (Ner, NerIter(0)) => true,
            (NerIter(i), MrcIter(j)) => j == i + 1,
            (MrcIter(i), NerIter(j)) => i == j && i >= 1,
            _ => false,
        }
    }

    /// Loop round index for iterated tags.
    pub fn iteration(self) -> Option<u32> {
        match self {
            StageTag::NerIter(i) | StageTag::MrcIter(i) => Some(i),
            _ => None,
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageTag::Initial => f.write_str("theta_0"),
            StageTag::Mlm => f.write_str("theta_mlm"),
            StageTag::Mrc => f.write_str("theta_mrc"),
            StageTag::Ner => f.write_str("theta_ner"),
            StageTag::NerIter(i) => write!(f, "theta_ner^({i})"),
            StageTag::MrcIter(i) => write!(f, "theta_mrc^({i})"),
        }
    }
}

impl FromStr for StageTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let iter = |prefix: &str| -> Option<u32> {
            s.strip_prefix(prefix)?.strip_suffix(')')?.parse().ok()
        };
        match s {
            "theta_0" => Ok(StageTag::Initial),
            "theta_mlm" => Ok(StageTag::Mlm),
            "theta_mrc" => Ok(StageTag::Mrc),
            "theta_ner" => Ok(StageTag::Ner),
            _ => iter("theta_ner^(")
                .map(StageTag::NerIter)
                .or_else(|| iter("theta_mrc^(").map(StageTag::MrcIter))
                .ok_or_else(|| format!("unknown stage tag `{s}`")),
        }
    }
}

impl Serialize for StageTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Encoder parameters, attached heads, and the stage they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub vocab: Arc<Vocabulary>,
    pub label_set: LabelSet,
    pub params: ModelParams,
    pub tag: StageTag,
}

impl ModelState {
    /// Freshly initialized encoder with no heads, tagged [`StageTag::Initial`].
    pub fn new(config: EncoderConfig, vocab: Arc<Vocabulary>, label_set: LabelSet, seed: u64) -> Self {
        let encoder = EncoderParams::init(&config, vocab.len(), seed);
        Self {
            config,
            vocab,
            label_set,
            params: ModelParams {
                encoder,
                ner: None,
                mrc: None,
                mlm: None,
            },
            tag: StageTag::Initial,
        }
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn has_head(&self, kind: HeadKind) -> bool {
        match kind {
            HeadKind::Mlm => self.params.mlm.is_some(),
            HeadKind::Mrc => self.params.mrc.is_some(),
            HeadKind::Ner => self.params.ner.is_some(),
        }
    }

    /// Attaches a freshly initialized head if none is present.
    pub fn ensure_head(&mut self, kind: HeadKind, seed: u64) {
        let d = self.d_model();
        match kind {
            HeadKind::Mlm => {
                let tied = self.config.tie_mlm_weights;
                let v = self.vocab.len();
                self.params.mlm.get_or_insert_with(|| MlmHead::init(d, v, tied, seed));
            }
            HeadKind::Mrc => {
                self.params.mrc.get_or_insert_with(|| MrcHead::init(d, seed));
            }
            HeadKind::Ner => {
                let y = self.label_set.num_tags();
                self.params.ner.get_or_insert_with(|| NerHead::init(d, y, seed));
            }
        }
    }

    /// Copy of this state re-tagged as `next`, refusing edges the
    /// fine-tuning chain does not contain.
    pub fn handoff(&self, next: StageTag) -> Result<ModelState, ModelError> {
        if !self.tag.can_hand_to(next) {
            return Err(ModelError::InvalidHandoff {
                from: self.tag,
                to: next,
            });
        }
        let mut out = self.clone();
        out.tag = next;
        Ok(out)
    }

    fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// `[CLS] tokens [SEP]`; token `i` sits at row `i + 1`.
    fn sentence_input(&self, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(self.vocab.id(vocab::CLS));
        ids.extend(self.ids(tokens));
        ids.push(self.vocab.id(vocab::SEP));
        ids
    }

    /// `[CLS] query [SEP] context [SEP]` and the row of the first context token.
    fn mrc_input(&self, query: &str, context: &[String]) -> (Vec<usize>, usize) {
        let q = tokenize(query);
        let mut ids = Vec::with_capacity(q.len() + context.len() + 3);
        ids.push(self.vocab.id(vocab::CLS));
        ids.extend(self.ids(&q));
        ids.push(self.vocab.id(vocab::SEP));
        let offset = ids.len();
        ids.extend(self.ids(context));
        ids.push(self.vocab.id(vocab::SEP));
        (ids, offset)
    }

    /// One contextual vector of width `d_model` per input token.
    pub fn encode(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let h = encoder::forward_eval(&self.params.encoder, &self.sentence_input(tokens));
        Ok(h.slice(s![1..=tokens.len(), ..]).to_owned())
    }

    /// Tag distribution per token.
    pub fn ner_forward(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError> {
        let head = self.params.ner.as_ref().ok_or(ModelError::MissingHead(HeadKind::Ner))?;
        let h = self.encode(tokens)?;
        Ok(softmax_rows(&(h.dot(&head.w) + &head.b)))
    }

    /// Start and end distributions (index 1 = boundary) per context token.
    pub fn mrc_forward(&self, example: &MrcExample) -> Result<(Array2<f64>, Array2<f64>), ModelError> {
        let head = self.params.mrc.as_ref().ok_or(ModelError::MissingHead(HeadKind::Mrc))?;
        if example.context.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let (ids, off) = self.mrc_input(&example.query, &example.context);
        let h = encoder::forward_eval(&self.params.encoder, &ids);
        let ctx = h.slice(s![off..off + example.context.len(), ..]);
        Ok((
            softmax_rows(&ctx.dot(&head.w_start)),
            softmax_rows(&ctx.dot(&head.w_end)),
        ))
    }

    /// Distribution over the vocabulary at every row of the masked input.
    pub fn mlm_forward(&self, tokens: &[String]) -> Result<Array2<f64>, ModelError> {
        let head = self.params.mlm.as_ref().ok_or(ModelError::MissingHead(HeadKind::Mlm))?;
        let h = self.encode(tokens)?;
        let logits = match &head.w {
            Some(w) => h.dot(w),
            None => h.dot(&self.params.encoder.token_embedding.t()),
        };
        Ok(softmax_rows(&(logits + &head.b)))
    }

    pub fn gold_indices(&self, tags: &[Tag]) -> Result<Vec<usize>, ModelError> {
        tags.iter()
            .map(|t| {
                self.label_set
                    .tag_index(t)
                    .ok_or_else(|| ModelError::UnknownTag(t.to_string()))
            })
            .collect()
    }

    /// Loss and full-model gradient of the NER objective on one sentence.
    pub fn ner_loss_grad(&self, tokens: &[String], tags: &[Tag]) -> Result<(f64, ModelParams), ModelError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_ner(tokens, tags, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn mrc_loss_grad(&self, example: &MrcExample) -> Result<(f64, ModelParams), ModelError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_mrc(example, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    pub fn mlm_loss_grad(&self, instance: &MaskedInstance) -> Result<(f64, ModelParams), ModelError> {
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_mlm(instance, 1.0, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds `weight * d(loss)/d(params)` into `grads` and returns the loss.
    pub(crate) fn accumulate_ner(
        &self,
        tokens: &[String],
        tags: &[Tag],
        weight: f64,
        grads: &mut ModelParams,
    ) -> Result<f64, ModelError> {
        let head = self.params.ner.as_ref().ok_or(ModelError::MissingHead(HeadKind::Ner))?;
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() != tags.len() {
            return Err(ModelError::LengthMismatch {
                expected: tokens.len(),
                found: tags.len(),
            });
        }
        let gold = self.gold_indices(tags)?;
        let ids = self.sentence_input(tokens);
        let (h, cache) = encoder::forward(&self.params.encoder, &ids);
        let rows = 1..=tokens.len();
        let hs = h.slice(s![rows.clone(), ..]);
        let probs = softmax_rows(&(hs.dot(&head.w) + &head.b));
        let loss = ner_loss(&probs, &gold)?;

        let d_logits = cross_entropy_grad(probs, &gold, weight);
        let g = grads.ner.as_mut().expect("gradient layout mirrors parameters");
        g.w += &hs.t().dot(&d_logits);
        g.b.row_mut(0).scaled_add(1.0, &d_logits.sum_axis(Axis(0)));
        let mut dh = Array2::zeros(h.raw_dim());
        dh.slice_mut(s![rows, ..]).assign(&d_logits.dot(&head.w.t()));
        encoder::backward(&self.params.encoder, &cache, dh, &mut grads.encoder);
        Ok(loss)
    }

    pub(crate) fn accumulate_mrc(
        &self,
        example: &MrcExample,
        weight: f64,
        grads: &mut ModelParams,
    ) -> Result<f64, ModelError> {
        let head = self.params.mrc.as_ref().ok_or(ModelError::MissingHead(HeadKind::Mrc))?;
        let n = example.context.len();
        if n == 0 {
            return Err(ModelError::EmptyInput);
        }
        let (start_flags, end_flags) = boundary_flags(&example.answers, n)?;
        let (ids, off) = self.mrc_input(&example.query, &example.context);
        let (h, cache) = encoder::forward(&self.params.encoder, &ids);
        let rows = off..off + n;
        let hs = h.slice(s![rows.clone(), ..]);
        let ps = softmax_rows(&hs.dot(&head.w_start));
        let pe = softmax_rows(&hs.dot(&head.w_end));
        let loss = ner_loss(&ps, &start_flags)? + ner_loss(&pe, &end_flags)?;

        let ds = cross_entropy_grad(ps, &start_flags, weight);
        let de = cross_entropy_grad(pe, &end_flags, weight);
        let g = grads.mrc.as_mut().expect("gradient layout mirrors parameters");
        g.w_start += &hs.t().dot(&ds);
        g.w_end += &hs.t().dot(&de);
        let mut dh = Array2::zeros(h.raw_dim());
        dh.slice_mut(s![rows, ..])
            .assign(&(ds.dot(&head.w_start.t()) + de.dot(&head.w_end.t())));
        encoder::backward(&self.params.encoder, &cache, dh, &mut grads.encoder);
        Ok(loss)
    }

    pub(crate) fn accumulate_mlm(
        &self,
        instance: &MaskedInstance,
        weight: f64,
        grads: &mut ModelParams,
    ) -> Result<f64, ModelError> {
        let head = self.params.mlm.as_ref().ok_or(ModelError::MissingHead(HeadKind::Mlm))?;
        if instance.tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if instance.targets.is_empty() {
            return Ok(0.0);
        }
        if let Some((&pos, _)) = instance.targets.iter().next_back() {
            if pos >= instance.tokens.len() {
                return Err(ModelError::LengthMismatch {
                    expected: instance.tokens.len(),
                    found: pos + 1,
                });
            }
        }
        let ids = self.sentence_input(&instance.tokens);
        let (h, cache) = encoder::forward(&self.params.encoder, &ids);
        let rows: Vec<usize> = instance.targets.keys().map(|p| p + 1).collect();
        let gold: Vec<usize> = instance.targets.values().map(|t| self.vocab.id(t)).collect();
        let hm = h.select(Axis(0), &rows);
        let proj: ArrayView2<f64> = match &head.w {
            Some(w) => w.view(),
            None => self.params.encoder.token_embedding.t(),
        };
        let probs = softmax_rows(&(hm.dot(&proj) + &head.b));
        let loss = ner_loss(&probs, &gold)?;

        let d_logits = cross_entropy_grad(probs, &gold, weight);
        let dhm = d_logits.dot(&proj.t());
        let g = grads.mlm.as_mut().expect("gradient layout mirrors parameters");
        g.b.row_mut(0).scaled_add(1.0, &d_logits.sum_axis(Axis(0)));
        match g.w.as_mut() {
            Some(gw) => *gw += &hm.t().dot(&d_logits),
            None => grads.encoder.token_embedding += &d_logits.t().dot(&hm),
        }
        let mut dh = Array2::zeros(h.raw_dim());
        for (r, &row) in rows.iter().enumerate() {
            dh.row_mut(row).assign(&dhm.row(r));
        }
        encoder::backward(&self.params.encoder, &cache, dh, &mut grads.encoder);
        Ok(loss)
    }
}

/// `weight * (p - onehot(gold)) / n`, the gradient of the mean cross-entropy
/// with respect to the logits.
fn cross_entropy_grad(mut probs: Array2<f64>, gold: &[usize], weight: f64) -> Array2<f64> {
    let n = gold.len() as f64;
    for (mut row, &g) in probs.rows_mut().into_iter().zip(gold) {
        row[g] -= 1.0;
    }
    probs *= weight / n;
    probs
}
