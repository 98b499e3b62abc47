//! Flat-key run configuration with environment overrides.
//!
//! Every key may be overridden by an environment variable named `TOF_` plus
//! the upper-cased key, e.g. `TOF_NER_LEARNING_RATE=1e-4`. Command-line flags
//! win over both.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tofner::convert::{mrc_normalize, substitute_words, QueryTemplateSet, WordMap};
use tofner::corpus::io::{read_mrc_jsonl, read_ner_jsonl};
use tofner::corpus::{parse_conll, CorpusRegistry, CorpusRole, LabelSet, MrcExample, TaggedSentence};
use tofner::masking::{MaskPolicy, MaskingParams};
use tofner::model::EncoderConfig;
use tofner::pipeline::{Mode, PipelineConfig, StageSettings};

pub const ENV_PREFIX: &str = "TOF_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Learning rates for a pretrained encoder.
    #[default]
    Pretrained,
    /// Learning rates for the built-in encoder trained from scratch.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub preset: Preset,
    pub mode: Option<String>,
    pub iterations: Option<u32>,
    pub seed: Option<u64>,
    pub labels: Option<Vec<String>>,
    pub templates: Option<PathBuf>,

    pub t_ner_unlabeled: Option<PathBuf>,
    pub s_ner_unlabeled: Option<PathBuf>,
    pub s_ner: Option<PathBuf>,
    pub t_mrc: Option<PathBuf>,
    pub s_mrc: Option<PathBuf>,
    pub s_ner_unlabeled_translated: Option<PathBuf>,
    pub s_ner_translated: Option<PathBuf>,
    /// Two-column word map; when set, translated source copies are derived
    /// from it unless given explicitly.
    pub word_map: Option<PathBuf>,

    pub d_model: Option<usize>,
    pub layers: Option<usize>,
    pub ff_width: Option<usize>,
    pub max_positions: Option<usize>,
    pub tie_mlm_weights: Option<bool>,

    pub mask_k: Option<usize>,
    pub mask_rate: Option<f64>,

    pub mlm_learning_rate: Option<f64>,
    pub mlm_batch_size: Option<usize>,
    pub mlm_epochs: Option<usize>,
    pub mrc_learning_rate: Option<f64>,
    pub mrc_batch_size: Option<usize>,
    pub mrc_epochs: Option<usize>,
    pub ner_learning_rate: Option<f64>,
    pub ner_batch_size: Option<usize>,
    pub ner_epochs: Option<usize>,
    pub ner_pseudo_learning_rate: Option<f64>,
    pub ner_pseudo_batch_size: Option<usize>,
    pub ner_pseudo_epochs: Option<usize>,
    pub loop_mrc_learning_rate: Option<f64>,
    pub loop_mrc_batch_size: Option<usize>,
    pub loop_mrc_epochs: Option<usize>,
    pub loop_ner_learning_rate: Option<f64>,
    pub loop_ner_batch_size: Option<usize>,
    pub loop_ner_epochs: Option<usize>,

    /// 0 disables clipping.
    pub max_grad_norm: Option<f64>,
    pub mrc_negative_keep_ratio: Option<f64>,
    pub pseudo_min_confidence: Option<f64>,
    pub loop_mrc_include_source: Option<bool>,
}

/// All keys a config file may contain.
pub const KNOWN_KEYS: [&str; 44] = [
    "out", "preset", "mode", "iterations", "seed", "labels", "templates",
    "t_ner_unlabeled", "s_ner_unlabeled", "s_ner", "t_mrc", "s_mrc",
    "s_ner_unlabeled_translated", "s_ner_translated", "word_map",
    "d_model", "layers", "ff_width", "max_positions", "tie_mlm_weights",
    "mask_k", "mask_rate",
    "mlm_learning_rate", "mlm_batch_size", "mlm_epochs",
    "mrc_learning_rate", "mrc_batch_size", "mrc_epochs",
    "ner_learning_rate", "ner_batch_size", "ner_epochs",
    "ner_pseudo_learning_rate", "ner_pseudo_batch_size", "ner_pseudo_epochs",
    "loop_mrc_learning_rate", "loop_mrc_batch_size", "loop_mrc_epochs",
    "loop_ner_learning_rate", "loop_ner_batch_size", "loop_ner_epochs",
    "max_grad_norm", "mrc_negative_keep_ratio", "pseudo_min_confidence", "loop_mrc_include_source",
];

fn env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `TOF_*` overrides from `env`, and
    /// resolves relative paths against the config file's directory.
    pub fn load(path: Option<&Path>, env: &BTreeMap<String, String>) -> Result<Self, String> {
        let (mut table, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
                (table, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (toml::Table::new(), PathBuf::new()),
        };
        for key in KNOWN_KEYS {
            if let Some(raw) = env.get(&format!("{ENV_PREFIX}{}", key.to_ascii_uppercase())) {
                table.insert(key.to_string(), env_value(raw));
            }
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| e.to_string())?;
        cfg.resolve(&base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() && !base.as_os_str().is_empty() {
                    *path = base.join(&*path);
                }
            }
        };
        for p in [
            &mut self.out,
            &mut self.templates,
            &mut self.t_ner_unlabeled,
            &mut self.s_ner_unlabeled,
            &mut self.s_ner,
            &mut self.t_mrc,
            &mut self.s_mrc,
            &mut self.s_ner_unlabeled_translated,
            &mut self.s_ner_translated,
            &mut self.word_map,
        ] {
            fix(p);
        }
    }

    pub fn label_set(&self) -> Result<LabelSet, String> {
        match &self.labels {
            None => Ok(LabelSet::conll()),
            Some(types) => LabelSet::new(types.iter().cloned()).map_err(|e| e.to_string()),
        }
    }

    pub fn input_paths(&self) -> Vec<(CorpusRole, &Path)> {
        [
            (CorpusRole::TNerUnlabeled, &self.t_ner_unlabeled),
            (CorpusRole::SNerUnlabeled, &self.s_ner_unlabeled),
            (CorpusRole::SNer, &self.s_ner),
            (CorpusRole::TMrc, &self.t_mrc),
            (CorpusRole::SMrc, &self.s_mrc),
            (CorpusRole::SNerUnlabeledTranslated, &self.s_ner_unlabeled_translated),
            (CorpusRole::SNerTranslated, &self.s_ner_translated),
        ]
        .into_iter()
        .filter_map(|(r, p)| p.as_deref().map(|p| (r, p)))
        .collect()
    }

    /// Pipeline configuration, or every problem found.
    pub fn pipeline_config(&self) -> Result<PipelineConfig, Vec<String>> {
        let mut errors = Vec::new();
        let mut c = match self.preset {
            Preset::Pretrained => PipelineConfig::default(),
            Preset::Desk => PipelineConfig::desk(),
        };
        if let Some(m) = &self.mode {
            match m.parse::<Mode>() {
                Ok(m) => c.mode = m,
                Err(e) => errors.push(e),
            }
        }
        if let Some(t) = self.iterations {
            c.iterations = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        match self.label_set() {
            Ok(ls) => c.label_set = ls,
            Err(e) => errors.push(e),
        }
        let e: &mut EncoderConfig = &mut c.encoder;
        e.d_model = self.d_model.unwrap_or(e.d_model);
        e.layers = self.layers.unwrap_or(e.layers);
        e.ff_width = self.ff_width.unwrap_or(e.ff_width);
        e.max_positions = self.max_positions.unwrap_or(e.max_positions);
        e.tie_mlm_weights = self.tie_mlm_weights.unwrap_or(e.tie_mlm_weights);
        c.masking = MaskingParams {
            k: self.mask_k.unwrap_or(c.masking.k),
            rate: self.mask_rate.unwrap_or(c.masking.rate),
            policy: MaskPolicy::default(),
        };
        let stage = |s: &mut StageSettings, lr: Option<f64>, bs: Option<usize>, ep: Option<usize>| {
            s.learning_rate = lr.unwrap_or(s.learning_rate);
            s.batch_size = bs.or(s.batch_size);
            s.epochs = ep.or(s.epochs);
        };
        stage(&mut c.mlm, self.mlm_learning_rate, self.mlm_batch_size, self.mlm_epochs);
        stage(&mut c.mrc, self.mrc_learning_rate, self.mrc_batch_size, self.mrc_epochs);
        stage(&mut c.ner, self.ner_learning_rate, self.ner_batch_size, self.ner_epochs);
        stage(
            &mut c.ner_pseudo,
            self.ner_pseudo_learning_rate,
            self.ner_pseudo_batch_size,
            self.ner_pseudo_epochs,
        );
        stage(
            &mut c.loop_mrc,
            self.loop_mrc_learning_rate,
            self.loop_mrc_batch_size,
            self.loop_mrc_epochs,
        );
        stage(
            &mut c.loop_ner,
            self.loop_ner_learning_rate,
            self.loop_ner_batch_size,
            self.loop_ner_epochs,
        );
        if let Some(n) = self.max_grad_norm {
            c.max_grad_norm = (n > 0.0).then_some(n);
        }
        c.mrc_negative_keep_ratio = self.mrc_negative_keep_ratio.unwrap_or(c.mrc_negative_keep_ratio);
        c.pseudo_min_confidence = self.pseudo_min_confidence.or(c.pseudo_min_confidence);
        c.loop_mrc_include_source = self.loop_mrc_include_source.unwrap_or(c.loop_mrc_include_source);
        if let Err(e) = c.validate() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(errors)
        }
    }

    /// Checks every referenced path and the configuration values, collecting
    /// all problems instead of stopping at the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.out.is_none() {
            errors.push("no output directory: set `out` or pass --out".into());
        }
        for (role, path) in self.input_paths() {
            if !path.is_file() {
                errors.push(format!("{role}: {} does not exist", path.display()));
            }
        }
        for (key, path) in [("templates", &self.templates), ("word_map", &self.word_map)] {
            if let Some(p) = path {
                if !p.is_file() {
                    errors.push(format!("{key}: {} does not exist", p.display()));
                }
            }
        }
        if let Err(mut e) = self.pipeline_config() {
            errors.append(&mut e);
        }
        errors
    }
}

pub fn templates(path: Option<&Path>, label_set: &LabelSet) -> Result<QueryTemplateSet, String> {
    match path {
        None => QueryTemplateSet::default_for(label_set).map_err(|e| e.to_string()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            QueryTemplateSet::from_json(&text, label_set).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// NER data from CoNLL or (for `.jsonl`) line-JSON.
pub fn read_ner(path: &Path, label_set: &LabelSet) -> Result<Vec<TaggedSentence>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let parsed = if is_jsonl(path) {
        read_ner_jsonl(&text, label_set)
    } else {
        parse_conll(&text, label_set, &source)
    };
    parsed.map_err(|e| format!("{}: {e}", path.display()))
}

/// MRC data from line-JSON, or from a SQuAD-style document otherwise.
pub fn read_mrc(path: &Path) -> Result<Vec<MrcExample>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if is_jsonl(path) {
        read_mrc_jsonl(&text).map_err(|e| format!("{}: {e}", path.display()))
    } else {
        let norm = mrc_normalize(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        for w in &norm.warnings {
            log::warn!("{}: example {}: {}", path.display(), w.id, w.message);
        }
        Ok(norm.examples)
    }
}

/// Loads every configured corpus into a registry.
pub fn load_registry(cfg: &RunConfig, label_set: &LabelSet) -> Result<CorpusRegistry, Vec<String>> {
    let mut errors = Vec::new();
    let mut reg = CorpusRegistry::new();
    for (role, path) in cfg.input_paths() {
        let result = if role.is_mrc() {
            read_mrc(path).and_then(|d| reg.insert_mrc(role, d).map_err(|e| e.to_string()))
        } else {
            read_ner(path, label_set)
                .and_then(|d| reg.insert_ner(role, d).map(|_| ()).map_err(|e| e.to_string()))
        };
        if let Err(e) = result {
            errors.push(e);
        }
    }
    if let Some(p) = &cfg.word_map {
        match fs::read_to_string(p)
            .map_err(|e| e.to_string())
            .and_then(|t| WordMap::parse(&t, true).map_err(|e| e.to_string()))
        {
            Ok(map) => {
                let derived = [
                    (CorpusRole::SNerUnlabeled, CorpusRole::SNerUnlabeledTranslated),
                    (CorpusRole::SNer, CorpusRole::SNerTranslated),
                ];
                for (from, to) in derived {
                    if reg.contains(to) {
                        continue;
                    }
                    if let Some(src) = reg.ner(from) {
                        let translated = substitute_words(src, &map);
                        if let Err(e) = reg.insert_ner(to, translated) {
                            errors.push(e.to_string());
                        }
                    }
                }
            }
            Err(e) => errors.push(format!("{}: {e}", p.display())),
        }
    }
    if errors.is_empty() {
        Ok(reg)
    } else {
        Err(errors)
    }
}
