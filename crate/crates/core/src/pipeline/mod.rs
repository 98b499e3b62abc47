//! The staged fine-tuning scheduler.
//!
//! A run is a fixed sequence of stages determined by [`Mode`] and the
//! iteration count. Each stage either trains one head on a union of corpora
//! (handing the parameters on to the next stage tag), labels the unlabeled
//! target corpus with the current NER model, or writes final predictions.
//! Everything a stage produces is persisted in the run directory and listed
//! in the [`PipelineTrace`], which is enough to [`resume`] an interrupted run.

mod run;
mod trace;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convert::ConvertError;
use crate::corpus::{CorpusError, CorpusRole, LabelSet, TaggedSentence};
use crate::masking::{MaskingError, MaskingParams};
use crate::model::{ner_decode, EncoderConfig, HeadKind, Hyperparams, ModelError, ModelState};

pub use run::{expected_final_tag, resume, run_tof, Progress, RunOptions, RunOutput};
pub use trace::{plan, Artifact, PipelineTrace, StageName, StageRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("mode {mode} requires corpus role `{role}`")]
    MissingRole { mode: Mode, role: CorpusRole },
    #[error("mode {mode} requires at least one of `t_mrc` or `s_mrc`")]
    MissingMrc { mode: Mode },
    #[error("invalid pipeline configuration: {0}")]
    Config(String),
    #[error("run directory {0} is locked by another process")]
    Locked(String),
    #[error("run directory {0} already holds a run; resume it or pick a fresh directory")]
    AlreadyStarted(String),
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: StageName,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl PipelineError {
    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &PipelineError {
        match self {
            PipelineError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Which stages a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Every stage, including the continual-learning loop.
    Tof,
    /// Stops after the first pseudo-label NER stage.
    TofNoContinual,
    /// MLM, MRC and NER only.
    TofMrcOnly,
    /// MLM followed directly by NER.
    AdaptabertBaseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Tof,
        Mode::TofNoContinual,
        Mode::TofMrcOnly,
        Mode::AdaptabertBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tof => "TOF",
            Mode::TofNoContinual => "TOF_NO_CONTINUAL",
            Mode::TofMrcOnly => "TOF_MRC_ONLY",
            Mode::AdaptabertBaseline => "ADAPTABERT_BASELINE",
        }
    }

    pub fn uses_mrc(self) -> bool {
        self != Mode::AdaptabertBaseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| {
                format!("unknown mode `{s}` (expected TOF, TOF_NO_CONTINUAL, TOF_MRC_ONLY or ADAPTABERT_BASELINE)")
            })
    }
}

/// Optimizer settings of one training stage. Unset fields fall back to the
/// per-task defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSettings {
    pub learning_rate: f64,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl StageSettings {
    pub fn lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            batch_size: None,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    /// Continual-learning iterations.
    pub iterations: u32,
    pub seed: u64,
    pub label_set: LabelSet,
    pub encoder: EncoderConfig,
    pub masking: MaskingParams,
    pub mlm: StageSettings,
    pub mrc: StageSettings,
    pub ner: StageSettings,
    /// NER on the first pseudo-labeled target set.
    pub ner_pseudo: StageSettings,
    pub loop_mrc: StageSettings,
    pub loop_ner: StageSettings,
    pub max_grad_norm: Option<f64>,
    /// Fraction of no-answer MRC examples kept in training sets.
    pub mrc_negative_keep_ratio: f64,
    /// Drop pseudo-labeled sentences whose least confident token falls below
    /// this probability. Off by default.
    pub pseudo_min_confidence: Option<f64>,
    /// Add `s_mrc` to the loop-phase MRC training set.
    pub loop_mrc_include_source: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Tof,
            iterations: 1,
            seed: 2019,
            label_set: LabelSet::conll(),
            encoder: EncoderConfig::default(),
            masking: MaskingParams::default(),
            mlm: StageSettings::lr(5e-5),
            mrc: StageSettings::lr(2e-6),
            ner: StageSettings::lr(5e-5),
            ner_pseudo: StageSettings::lr(2e-5),
            loop_mrc: StageSettings::lr(5e-5),
            loop_ner: StageSettings::lr(5e-5),
            max_grad_norm: Some(1.0),
            mrc_negative_keep_ratio: 1.0,
            pseudo_min_confidence: None,
            loop_mrc_include_source: false,
        }
    }
}

impl PipelineConfig {
    /// Learning rates suited to the small built-in encoder trained from
    /// scratch; the defaults target a pretrained encoder.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                tie_mlm_weights: true,
                ..EncoderConfig::default()
            },
            mlm: StageSettings::lr(2e-3),
            mrc: StageSettings::lr(2e-3),
            ner: StageSettings::lr(2e-3),
            ner_pseudo: StageSettings::lr(1e-3),
            loop_mrc: StageSettings::lr(1e-3),
            loop_ner: StageSettings::lr(1e-3),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.masking.validate()?;
        let stages = [
            ("mlm", &self.mlm),
            ("mrc", &self.mrc),
            ("ner", &self.ner),
            ("ner_pseudo", &self.ner_pseudo),
            ("loop_mrc", &self.loop_mrc),
            ("loop_ner", &self.loop_ner),
        ];
        for (name, s) in stages {
            if !(s.learning_rate.is_finite() && s.learning_rate > 0.0) {
                return bad(format!("{name} learning rate must be positive"));
            }
            if s.batch_size == Some(0) {
                return bad(format!("{name} batch size must be at least 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.mrc_negative_keep_ratio) {
            return bad("mrc_negative_keep_ratio must lie in [0, 1]".into());
        }
        if let Some(c) = self.pseudo_min_confidence {
            if !(0.0..=1.0).contains(&c) {
                return bad("pseudo_min_confidence must lie in [0, 1]".into());
            }
        }
        let e = &self.encoder;
        if e.d_model == 0 || e.layers == 0 || e.ff_width == 0 || e.max_positions == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if self.label_set.types().is_empty() {
            return bad("label set is empty".into());
        }
        Ok(())
    }

    fn settings(&self, stage: StageName) -> (HeadKind, StageSettings, usize) {
        use StageName::*;
        let mrc_epochs = self.mrc.epochs.unwrap_or(6);
        let ner_epochs = self.ner.epochs.unwrap_or(6);
        match stage {
            Mlm => (HeadKind::Mlm, self.mlm, self.mlm.epochs.unwrap_or(3)),
            Mrc => (HeadKind::Mrc, self.mrc, mrc_epochs),
            Ner => (HeadKind::Ner, self.ner, ner_epochs),
            NerPseudo => (HeadKind::Ner, self.ner_pseudo, self.ner_pseudo.epochs.unwrap_or(ner_epochs)),
            MrcLoop(_) => (HeadKind::Mrc, self.loop_mrc, self.loop_mrc.epochs.unwrap_or(mrc_epochs)),
            NerLoop(_) => (HeadKind::Ner, self.loop_ner, self.loop_ner.epochs.unwrap_or(ner_epochs)),
            PseudoGen | Refresh | RefreshLoop(_) | Predict => {
                unreachable!("{stage} does not train")
            }
        }
    }

    /// Optimizer settings for a training stage at position `ordinal`.
    pub fn hyperparams(&self, stage: StageName, ordinal: usize) -> Hyperparams {
        let (kind, s, epochs) = self.settings(stage);
        Hyperparams {
            learning_rate: s.learning_rate,
            batch_size: s.batch_size.unwrap_or(Hyperparams::default_batch_size(kind)),
            epochs,
            seed: stage_seed(self.seed, ordinal),
            max_grad_norm: self.max_grad_norm,
        }
    }
}

/// Seed of the stage at `ordinal`; depends on nothing else, so a resumed
/// run draws the same numbers as an uninterrupted one.
pub fn stage_seed(seed: u64, ordinal: usize) -> u64 {
    let mut z = seed ^ (ordinal as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tags `unlabeled` with the NER head of `state`. Tokens and ids are kept
/// and the tags are always BIO-valid.
pub fn generate_pseudo_labels(
    state: &ModelState,
    unlabeled: &[TaggedSentence],
) -> Result<Vec<TaggedSentence>, ModelError> {
    Ok(pseudo_label_with_confidence(state, unlabeled)?
        .into_iter()
        .map(|(s, _)| s)
        .collect())
}

/// Like [`generate_pseudo_labels`], also returning for each sentence the
/// lowest winning-tag probability over its tokens.
pub fn pseudo_label_with_confidence(
    state: &ModelState,
    unlabeled: &[TaggedSentence],
) -> Result<Vec<(TaggedSentence, f64)>, ModelError> {
    if !state.has_head(HeadKind::Ner) {
        return Err(ModelError::MissingHead(HeadKind::Ner));
    }
    unlabeled
        .iter()
        .map(|s| {
            if s.tokens.is_empty() {
                return Ok((TaggedSentence::unlabeled(s.id.clone(), Vec::new()), 1.0));
            }
            let probs = state.ner_forward(&s.tokens)?;
            let confidence = probs
                .rows()
                .into_iter()
                .map(|r| r.iter().copied().fold(f64::MIN, f64::max))
                .fold(1.0, f64::min);
            let tagged = TaggedSentence {
                id: s.id.clone(),
                tokens: s.tokens.clone(),
                tags: ner_decode(&probs, &state.label_set),
            };
            Ok((tagged, confidence))
        })
        .collect()
}
