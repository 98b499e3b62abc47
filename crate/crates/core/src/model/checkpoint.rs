//! JSON checkpoint container.
//!
//! A checkpoint carries the stage tag, the hyperparameters of the stage that
//! produced it, the encoder shape, the label set, the vocabulary and its
//! hash, and every parameter tensor by name. Loading recomputes the
//! vocabulary hash and, when the caller supplies the vocabulary it expects,
//! checks that too.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::train::Hyperparams;
use super::{EncoderConfig, HeadKind, ModelError, ModelState, StageTag, Vocabulary};
use crate::corpus::io::{sha256_hex, write_atomic};
use crate::corpus::LabelSet;

pub const FORMAT: &str = "tofner-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    stage_tag: StageTag,
    #[serde(default)]
    hyperparams: Option<Hyperparams>,
    encoder: EncoderConfig,
    label_set: LabelSet,
    vocab_hash: String,
    vocab: Vocabulary,
    tensors: Vec<NamedTensor>,
}

/// Serialized checkpoint bytes for `state`.
pub fn to_bytes(state: &ModelState, hyperparams: Option<&Hyperparams>) -> Vec<u8> {
    let tensors = state
        .params
        .tensors()
        .into_iter()
        .map(|(name, t)| NamedTensor {
            name,
            shape: [t.nrows(), t.ncols()],
            data: t.iter().copied().collect(),
        })
        .collect();
    let file = CheckpointFile {
        format: FORMAT.to_string(),
        stage_tag: state.tag,
        hyperparams: hyperparams.copied(),
        encoder: state.config,
        label_set: state.label_set.clone(),
        vocab_hash: state.vocab.hash(),
        vocab: (*state.vocab).clone(),
        tensors,
    };
    serde_json::to_vec(&file).expect("checkpoint serializes")
}

/// Writes the checkpoint atomically and returns the SHA-256 of the file.
pub fn save(
    state: &ModelState,
    hyperparams: Option<&Hyperparams>,
    path: &Path,
) -> Result<String, ModelError> {
    let bytes = to_bytes(state, hyperparams);
    write_atomic(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn load(
    path: &Path,
    expected_vocab: Option<&Vocabulary>,
) -> Result<(ModelState, Option<Hyperparams>), ModelError> {
    from_bytes(&fs::read(path)?, expected_vocab)
}

pub fn from_bytes(
    bytes: &[u8],
    expected_vocab: Option<&Vocabulary>,
) -> Result<(ModelState, Option<Hyperparams>), ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let file: CheckpointFile =
        serde_json::from_slice(bytes).map_err(|e| bad(format!("unreadable: {e}")))?;
    if file.format != FORMAT {
        return Err(bad(format!("unsupported format `{}`", file.format)));
    }
    let actual = file.vocab.hash();
    if actual != file.vocab_hash {
        return Err(bad(format!(
            "vocabulary hash mismatch: recorded {}, computed {actual}",
            file.vocab_hash
        )));
    }
    if let Some(expected) = expected_vocab {
        if expected.hash() != actual {
            return Err(bad(format!(
                "checkpoint vocabulary {actual} differs from expected {}",
                expected.hash()
            )));
        }
    }

    let has = |name: &str| file.tensors.iter().any(|t| t.name == name);
    let mut state = ModelState::new(file.encoder, Arc::new(file.vocab), file.label_set, 0);
    state.tag = file.stage_tag;
    if has("ner.w") {
        state.ensure_head(HeadKind::Ner, 0);
    }
    if has("mrc.w_start") {
        state.ensure_head(HeadKind::Mrc, 0);
    }
    if has("mlm.b") {
        state.ensure_head(HeadKind::Mlm, 0);
    }

    let mut slots = state.params.tensors_mut();
    if slots.len() != file.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, found {}",
            slots.len(),
            file.tensors.len()
        )));
    }
    for t in file.tensors {
        let slot = slots
            .iter_mut()
            .find(|(n, _)| *n == t.name)
            .ok_or_else(|| bad(format!("unexpected tensor `{}`", t.name)))?;
        let expected = [slot.1.nrows(), slot.1.ncols()];
        if t.shape != expected {
            return Err(bad(format!(
                "tensor `{}` has shape {:?}, expected {:?}",
                t.name, t.shape, expected
            )));
        }
        *slot.1 = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
            .map_err(|e| bad(format!("tensor `{}`: {e}", t.name)))?;
    }
    drop(slots);
    Ok((state, file.hyperparams))
}
