//! Stage execution, run-directory persistence and resume.
//!
//! Run directory layout:
//!
//! ```text
//! config.json        pipeline configuration
//! templates.json     query templates
//! vocab.json         vocabulary
//! inputs/<role>.jsonl
//! trace.json
//! checkpoints/NN_<STAGE>.json
//! data/<dataset>.jsonl
//! predictions.conll
//! ```

use std::fs::{self, File, OpenOptions, TryLockError};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::trace::{plan, Artifact, PipelineTrace, StageName, StageRecord};
use super::{generate_pseudo_labels, pseudo_label_with_confidence, stage_seed, Mode, PipelineConfig, PipelineError};
use crate::convert::{downsample_negatives, pseudo_ner_to_mrc, tokenize, QueryTemplateSet};
use crate::corpus::io::{read_mrc_jsonl, read_ner_jsonl, sha256_hex, to_jsonl, write_atomic};
use crate::corpus::{
    parse_conll, serialize_conll, CorpusRegistry, CorpusRole, Dataset, MrcExample, TaggedSentence,
};
use crate::masking::{build_mlm_corpus, mask_corpus};
use crate::model::{checkpoint, train_stage, ModelState, StageTag, TrainData, Vocabulary};

const CONFIG: &str = "config.json";
const TEMPLATES: &str = "templates.json";
const VOCAB: &str = "vocab.json";
const TRACE: &str = "trace.json";
const PREDICTIONS: &str = "predictions.conll";
const LOCK: &str = ".lock";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Return once this many stages have completed, leaving the run
    /// resumable. Used to simulate interruptions.
    pub stop_after: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Parameters of the last training stage.
    pub state: ModelState,
    /// Final predictions on the unlabeled target corpus.
    pub predictions: Vec<TaggedSentence>,
    pub trace: PipelineTrace,
    pub run_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub enum Progress {
    Complete(Box<RunOutput>),
    Stopped { trace: PipelineTrace },
}

impl Progress {
    pub fn trace(&self) -> &PipelineTrace {
        match self {
            Progress::Complete(o) => &o.trace,
            Progress::Stopped { trace } => trace,
        }
    }

    /// The output of a completed run, or `None` if it was stopped.
    pub fn into_output(self) -> Option<RunOutput> {
        match self {
            Progress::Complete(o) => Some(*o),
            Progress::Stopped { .. } => None,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    serde_json::from_str(&read_text(path)?).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    write_atomic(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).expect("run files serialize");
    write_bytes(path, text.as_bytes())
}

/// Exclusive advisory lock on the run directory, released on drop.
struct RunLock(#[allow(dead_code)] File);

fn lock(dir: &Path) -> Result<RunLock, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(LOCK);
    let file = OpenOptions::new()
        .create(true)
        .truncate(false)
        .write(true)
        .open(&path)
        .map_err(io_err(&path))?;
    match file.try_lock() {
        Ok(()) => Ok(RunLock(file)),
        Err(TryLockError::WouldBlock) => Err(PipelineError::Locked(dir.display().to_string())),
        Err(TryLockError::Error(e)) => Err(io_err(&path)(e)),
    }
}

fn require_ner(registry: &CorpusRegistry, mode: Mode, role: CorpusRole) -> Result<(), PipelineError> {
    match registry.ner(role) {
        Some(d) if !d.is_empty() => Ok(()),
        Some(_) => Err(PipelineError::Config(format!("corpus role `{role}` is empty"))),
        None => Err(PipelineError::MissingRole { mode, role }),
    }
}

/// Checks that `registry` holds every role `mode` reads.
pub(crate) fn check_roles(registry: &CorpusRegistry, mode: Mode) -> Result<(), PipelineError> {
    require_ner(registry, mode, CorpusRole::TNerUnlabeled)?;
    require_ner(registry, mode, CorpusRole::SNerUnlabeled)?;
    require_ner(registry, mode, CorpusRole::SNer)?;
    if mode.uses_mrc() && !registry.contains(CorpusRole::TMrc) && !registry.contains(CorpusRole::SMrc) {
        return Err(PipelineError::MissingMrc { mode });
    }
    Ok(())
}

/// Vocabulary over every token of the registered corpora and the queries.
pub(crate) fn build_vocabulary(registry: &CorpusRegistry, templates: &QueryTemplateSet) -> Vocabulary {
    let mut words: Vec<String> = Vec::new();
    for role in registry.roles() {
        match registry.get(role).expect("listed role is present") {
            Dataset::Ner(d) => words.extend(d.iter().flat_map(|s| s.tokens.iter().cloned())),
            Dataset::Mrc(d) => {
                for ex in d.iter() {
                    words.extend(ex.context.iter().cloned());
                    words.extend(tokenize(&ex.query));
                }
            }
        }
    }
    for (_, q) in templates.iter() {
        words.extend(tokenize(q));
    }
    Vocabulary::build(words.iter().map(String::as_str))
}

/// Runs the full stage sequence of `config.mode` in a fresh `run_dir`.
///
/// Inputs, templates and configuration are copied into the directory first,
/// so [`resume`] needs nothing but the directory.
pub fn run_tof(
    registry: &CorpusRegistry,
    templates: &QueryTemplateSet,
    config: &PipelineConfig,
    run_dir: &Path,
    options: &RunOptions,
) -> Result<Progress, PipelineError> {
    config.validate()?;
    check_roles(registry, config.mode)?;
    if templates.types().ne(config.label_set.types().iter().map(String::as_str)) {
        return Err(PipelineError::Config(
            "query templates do not cover exactly the configured label set".into(),
        ));
    }
    let _lock = lock(run_dir)?;
    if run_dir.join(TRACE).exists() {
        return Err(PipelineError::AlreadyStarted(run_dir.display().to_string()));
    }

    let mut inputs = CorpusRegistry::new();
    for role in CorpusRole::INPUT_ROLES {
        let path = run_dir.join("inputs").join(format!("{role}.jsonl"));
        match registry.get(role) {
            Some(Dataset::Ner(d)) => {
                inputs.insert_ner(role, d.to_vec())?;
                let stored = inputs.ner(role).expect("just inserted");
                write_bytes(&path, to_jsonl(stored).as_bytes())?;
            }
            Some(Dataset::Mrc(d)) => {
                inputs.insert_mrc(role, d.to_vec())?;
                write_bytes(&path, to_jsonl(d).as_bytes())?;
            }
            None => {}
        }
    }
    let vocab = build_vocabulary(&inputs, templates);
    write_json(&run_dir.join(CONFIG), config)?;
    write_bytes(&run_dir.join(TEMPLATES), templates.to_json().as_bytes())?;
    write_json(&run_dir.join(VOCAB), &vocab)?;

    let state = ModelState::new(config.encoder, Arc::new(vocab), config.label_set.clone(), config.seed);
    let runner = Runner {
        dir: run_dir.to_path_buf(),
        registry: inputs,
        templates: templates.clone(),
        config: config.clone(),
        trace: PipelineTrace::new(config.mode, config.iterations, config.seed),
        state,
        pseudo_label: String::new(),
        predictions: None,
    };
    runner.write_trace()?;
    runner.execute(options)
}

/// Continues the run in `run_dir` from its last completed stage.
///
/// Every recorded checkpoint and dataset is re-hashed first; any difference
/// from the trace refuses the resume. A completed run is returned as is.
pub fn resume(run_dir: &Path, options: &RunOptions) -> Result<Progress, PipelineError> {
    let _lock = lock(run_dir)?;
    let trace_path = run_dir.join(TRACE);
    if !trace_path.exists() {
        return Err(PipelineError::Resume(format!(
            "{} has no {TRACE}",
            run_dir.display()
        )));
    }
    let config: PipelineConfig = read_json(&run_dir.join(CONFIG))?;
    config.validate()?;
    let templates = QueryTemplateSet::from_json(&read_text(&run_dir.join(TEMPLATES))?, &config.label_set)?;
    let mut registry = CorpusRegistry::new();
    for role in CorpusRole::INPUT_ROLES {
        let path = run_dir.join("inputs").join(format!("{role}.jsonl"));
        if !path.exists() {
            continue;
        }
        let text = read_text(&path)?;
        if role.is_mrc() {
            registry.insert_mrc(role, read_mrc_jsonl(&text)?)?;
        } else {
            registry.insert_ner(role, read_ner_jsonl(&text, &config.label_set)?)?;
        }
    }
    check_roles(&registry, config.mode)?;
    let vocab: Vocabulary = read_json(&run_dir.join(VOCAB))?;
    let rebuilt = build_vocabulary(&registry, &templates);
    if rebuilt.hash() != vocab.hash() {
        return Err(PipelineError::Resume(format!(
            "stored vocabulary {} does not match the stored inputs ({})",
            vocab.hash(),
            rebuilt.hash()
        )));
    }

    let mut trace: PipelineTrace = read_json(&trace_path)?;
    if (trace.mode, trace.iterations, trace.seed) != (config.mode, config.iterations, config.seed) {
        return Err(PipelineError::Resume("trace header disagrees with config.json".into()));
    }
    let expected = plan(config.mode, config.iterations);
    if trace.records.len() > expected.len()
        || trace.stage_names().iter().zip(&expected).any(|(a, b)| a != b)
    {
        return Err(PipelineError::Resume(format!(
            "recorded stages {:?} are not a prefix of the {} plan",
            trace.stage_names().iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            config.mode
        )));
    }

    let vocab = Arc::new(vocab);
    let mut state = ModelState::new(config.encoder, vocab.clone(), config.label_set.clone(), config.seed);
    let mut pseudo_label = String::new();
    let mut predictions = None;
    for record in &trace.records {
        if let Some(ck) = &record.checkpoint {
            let bytes = verified(run_dir, ck)?;
            state = checkpoint::from_bytes(&bytes, Some(&vocab))?.0;
            if Some(state.tag) != record.produced_tag {
                return Err(PipelineError::Resume(format!(
                    "{} holds {} but the trace records {:?}",
                    ck.path, state.tag, record.produced_tag
                )));
            }
        }
        for out in &record.outputs {
            let bytes = verified(run_dir, out)?;
            let text = String::from_utf8_lossy(&bytes);
            match out.role {
                Some(CorpusRole::TNerPseudo) => {
                    let data = read_ner_jsonl(&text, &config.label_set)?;
                    registry.set_generated(CorpusRole::TNerPseudo, Dataset::Ner(Arc::new(data)));
                    pseudo_label = out.name.clone();
                }
                Some(CorpusRole::TMrcPseudo) => {
                    let data = read_mrc_jsonl(&text)?;
                    registry.set_generated(CorpusRole::TMrcPseudo, Dataset::Mrc(Arc::new(data)));
                }
                Some(CorpusRole::SNerAsMrc) => {
                    let data = read_mrc_jsonl(&text)?;
                    registry.set_generated(CorpusRole::SNerAsMrc, Dataset::Mrc(Arc::new(data)));
                }
                _ if record.stage == StageName::Predict => {
                    let mut parsed = parse_conll(&text, &config.label_set, "predictions")?;
                    let target = registry.ner(CorpusRole::TNerUnlabeled).unwrap_or_default();
                    for (p, t) in parsed.iter_mut().zip(target) {
                        p.id = t.id.clone();
                    }
                    predictions = Some(parsed);
                }
                _ => {}
            }
        }
    }

    let runner = Runner {
        dir: run_dir.to_path_buf(),
        registry,
        templates,
        config,
        trace: {
            trace.failure = None;
            trace
        },
        state,
        pseudo_label,
        predictions,
    };
    if runner.trace.complete {
        return Ok(Progress::Complete(Box::new(runner.output()?)));
    }
    log::info!("resuming after {} completed stages", runner.trace.records.len());
    runner.execute(options)
}

/// Reads an artifact and checks its hash against the trace.
fn verified(dir: &Path, artifact: &Artifact) -> Result<Vec<u8>, PipelineError> {
    let path = dir.join(&artifact.path);
    let bytes = fs::read(&path)
        .map_err(|e| PipelineError::Resume(format!("cannot read {}: {e}", artifact.path)))?;
    let actual = sha256_hex(&bytes);
    if actual != artifact.sha256 {
        return Err(PipelineError::Resume(format!(
            "{} has sha256 {actual} but the trace records {}",
            artifact.path, artifact.sha256
        )));
    }
    Ok(bytes)
}

struct Runner {
    dir: PathBuf,
    registry: CorpusRegistry,
    templates: QueryTemplateSet,
    config: PipelineConfig,
    trace: PipelineTrace,
    state: ModelState,
    /// Label of the pseudo-labeled NER set currently in the registry.
    pseudo_label: String,
    predictions: Option<Vec<TaggedSentence>>,
}

impl Runner {
    fn write_trace(&self) -> Result<(), PipelineError> {
        write_json(&self.dir.join(TRACE), &self.trace)
    }

    fn execute(mut self, options: &RunOptions) -> Result<Progress, PipelineError> {
        let stages = plan(self.config.mode, self.config.iterations);
        for (ordinal, &stage) in stages.iter().enumerate().skip(self.trace.records.len()) {
            if options.stop_after.is_some_and(|n| self.trace.records.len() >= n) {
                self.write_trace()?;
                return Ok(Progress::Stopped { trace: self.trace });
            }
            log::info!("stage {} ({}/{})", stage, ordinal + 1, stages.len());
            match self.run_stage(stage, ordinal) {
                Ok(record) => {
                    self.trace.records.push(record);
                    self.write_trace()?;
                }
                Err(e) => {
                    self.trace.failure = Some(format!("{stage}: {e}"));
                    self.write_trace()?;
                    return Err(PipelineError::Stage {
                        stage,
                        source: Box::new(e),
                    });
                }
            }
        }
        self.trace.complete = true;
        self.write_trace()?;
        Ok(Progress::Complete(Box::new(self.output()?)))
    }

    fn output(self) -> Result<RunOutput, PipelineError> {
        let predictions = self
            .predictions
            .ok_or_else(|| PipelineError::Resume("completed run has no predictions".into()))?;
        Ok(RunOutput {
            state: self.state,
            predictions,
            trace: self.trace,
            run_dir: self.dir,
        })
    }

    fn ner(&self, role: CorpusRole) -> Vec<TaggedSentence> {
        self.registry.ner(role).map(<[_]>::to_vec).unwrap_or_default()
    }

    fn mrc(&self, role: CorpusRole) -> Vec<MrcExample> {
        self.registry.mrc(role).map(<[_]>::to_vec).unwrap_or_default()
    }

    fn write_dataset<T: Serialize>(
        &self,
        name: &str,
        role: Option<CorpusRole>,
        file: &str,
        records: &[T],
    ) -> Result<Artifact, PipelineError> {
        let rel = format!("data/{file}");
        let bytes = to_jsonl(records).into_bytes();
        write_bytes(&self.dir.join(&rel), &bytes)?;
        Ok(Artifact {
            name: name.to_string(),
            role,
            path: rel,
            sha256: sha256_hex(&bytes),
            records: records.len(),
        })
    }

    fn record(&self, stage: StageName, consumed: Vec<(String, usize)>) -> StageRecord {
        StageRecord {
            stage,
            consumed: consumed.iter().map(|(n, _)| n.clone()).collect(),
            source_tag: Some(self.state.tag),
            produced_tag: None,
            dataset_sizes: consumed.into_iter().collect(),
            checkpoint: None,
            outputs: Vec::new(),
            epoch_losses: Vec::new(),
        }
    }

    /// Hands the current parameters to `stage`'s tag, trains, and saves a
    /// checkpoint.
    fn train(
        &mut self,
        stage: StageName,
        ordinal: usize,
        data: TrainData<'_>,
        mut record: StageRecord,
    ) -> Result<StageRecord, PipelineError> {
        let tag = stage.produces().expect("training stage");
        let hp = self.config.hyperparams(stage, ordinal);
        let start = self.state.handoff(tag)?;
        let (state, curve) = train_stage(&start, data, &hp)?;
        let rel = format!("checkpoints/{ordinal:02}_{stage}.json");
        let sha = checkpoint::save(&state, Some(&hp), &self.dir.join(&rel))?;
        record.checkpoint = Some(Artifact {
            name: tag.to_string(),
            role: None,
            path: rel,
            sha256: sha,
            records: state.params.num_parameters(),
        });
        record.produced_tag = Some(tag);
        record.epoch_losses = curve.epoch_losses;
        self.state = state;
        Ok(record)
    }

    /// Labels the unlabeled target corpus with the current NER model,
    /// applying the optional confidence filter.
    fn pseudo_label(&self) -> Result<Vec<TaggedSentence>, PipelineError> {
        let target = self.ner(CorpusRole::TNerUnlabeled);
        let labeled = pseudo_label_with_confidence(&self.state, &target)?;
        let total = labeled.len();
        let kept: Vec<TaggedSentence> = match self.config.pseudo_min_confidence {
            None => labeled.into_iter().map(|(s, _)| s).collect(),
            Some(min) => labeled
                .into_iter()
                .filter(|(_, c)| *c >= min)
                .map(|(s, _)| s)
                .collect(),
        };
        if kept.len() < total {
            log::info!("confidence filter kept {} of {total} pseudo-labeled sentences", kept.len());
        }
        Ok(kept)
    }

    fn mrc_union(&self, parts: Vec<Vec<MrcExample>>, ordinal: usize) -> Vec<MrcExample> {
        let all: Vec<MrcExample> = parts.into_iter().flatten().collect();
        downsample_negatives(
            &all,
            self.config.mrc_negative_keep_ratio,
            stage_seed(self.config.seed, ordinal) ^ 0x6e65_6761,
        )
    }

    fn run_stage(&mut self, stage: StageName, ordinal: usize) -> Result<StageRecord, PipelineError> {
        use CorpusRole as R;
        match stage {
            StageName::Mlm => {
                let target = self.ner(R::TNerUnlabeled);
                let mut source = self.ner(R::SNerUnlabeled);
                let mut consumed = vec![
                    (R::TNerUnlabeled.to_string(), target.len()),
                    (R::SNerUnlabeled.to_string(), source.len()),
                ];
                let translated = self.ner(R::SNerUnlabeledTranslated);
                if !translated.is_empty() {
                    consumed.push((R::SNerUnlabeledTranslated.to_string(), translated.len()));
                    source.extend(translated);
                }
                let seed = stage_seed(self.config.seed, ordinal);
                let sentences = build_mlm_corpus(&target, &source, seed)?;
                let pool = self.state.vocab.words().to_vec();
                let instances = mask_corpus(&sentences, &self.config.masking, &pool, seed)?;
                let mut record = self.record(stage, consumed);
                record.dataset_sizes.insert("mlm_sentences".into(), sentences.len());
                record.dataset_sizes.insert("mlm_instances".into(), instances.len());
                self.train(stage, ordinal, TrainData::Mlm(&instances), record)
            }
            StageName::Mrc => {
                self.registry.derive_ner_as_mrc(&self.templates)?;
                let derived = self.mrc(R::SNerAsMrc);
                let artifact =
                    self.write_dataset(R::SNerAsMrc.as_str(), Some(R::SNerAsMrc), "s_ner_as_mrc.jsonl", &derived)?;
                let mut consumed = Vec::new();
                let mut parts = Vec::new();
                for role in [R::TMrc, R::SMrc, R::SNerAsMrc] {
                    if self.registry.contains(role) {
                        let d = self.mrc(role);
                        consumed.push((role.to_string(), d.len()));
                        parts.push(d);
                    }
                }
                let data = self.mrc_union(parts, ordinal);
                let mut record = self.record(stage, consumed);
                record.dataset_sizes.insert("mrc_training".into(), data.len());
                record.outputs.push(artifact);
                self.train(stage, ordinal, TrainData::Mrc(&data), record)
            }
            StageName::Ner => {
                let mut data = self.ner(R::SNer);
                let mut consumed = vec![(R::SNer.to_string(), data.len())];
                let translated = self.ner(R::SNerTranslated);
                if !translated.is_empty() {
                    consumed.push((R::SNerTranslated.to_string(), translated.len()));
                    data.extend(translated);
                }
                let record = self.record(stage, consumed);
                self.train(stage, ordinal, TrainData::Ner(&data), record)
            }
            StageName::PseudoGen | StageName::Refresh | StageName::RefreshLoop(_) => {
                let target_len = self.registry.ner(R::TNerUnlabeled).map_or(0, <[_]>::len);
                let mut record = self.record(stage, vec![(R::TNerUnlabeled.to_string(), target_len)]);
                let pseudo = self.pseudo_label()?;
                let round = match stage {
                    StageName::PseudoGen => None,
                    StageName::Refresh => Some(0),
                    StageName::RefreshLoop(i) => Some(i),
                    _ => unreachable!(),
                };
                let (ner_name, ner_file) = match round {
                    None => ("t_ner_pseudo".to_string(), "t_ner_pseudo.jsonl".to_string()),
                    Some(r) => (format!("t_ner_pseudo^({r})"), format!("t_ner_pseudo_{r}.jsonl")),
                };
                record
                    .outputs
                    .push(self.write_dataset(&ner_name, Some(R::TNerPseudo), &ner_file, &pseudo)?);
                if let Some(r) = round {
                    let mrc = pseudo_ner_to_mrc(&pseudo, &self.templates)?;
                    record.outputs.push(self.write_dataset(
                        &format!("t_mrc_pseudo^({r})"),
                        Some(R::TMrcPseudo),
                        &format!("t_mrc_pseudo_{r}.jsonl"),
                        &mrc,
                    )?);
                    self.registry.set_generated(R::TMrcPseudo, Dataset::Mrc(Arc::new(mrc)));
                }
                self.registry.set_generated(R::TNerPseudo, Dataset::Ner(Arc::new(pseudo)));
                self.pseudo_label = ner_name;
                Ok(record)
            }
            StageName::NerPseudo | StageName::NerLoop(_) => {
                let data = self.ner(R::TNerPseudo);
                let record = self.record(stage, vec![(self.pseudo_label.clone(), data.len())]);
                self.train(stage, ordinal, TrainData::Ner(&data), record)
            }
            StageName::MrcLoop(i) => {
                let mut consumed = Vec::new();
                let mut parts = Vec::new();
                let mut roles = vec![R::TMrc];
                if self.config.loop_mrc_include_source {
                    roles.push(R::SMrc);
                }
                for role in roles {
                    if self.registry.contains(role) {
                        let d = self.mrc(role);
                        consumed.push((role.to_string(), d.len()));
                        parts.push(d);
                    }
                }
                let pseudo = self.mrc(R::TMrcPseudo);
                consumed.push((format!("t_mrc_pseudo^({})", i - 1), pseudo.len()));
                parts.push(pseudo);
                let data = self.mrc_union(parts, ordinal);
                let mut record = self.record(stage, consumed);
                record.dataset_sizes.insert("mrc_training".into(), data.len());
                self.train(stage, ordinal, TrainData::Mrc(&data), record)
            }
            StageName::Predict => {
                let target = self.ner(R::TNerUnlabeled);
                let mut record = self.record(stage, vec![(R::TNerUnlabeled.to_string(), target.len())]);
                let predictions = generate_pseudo_labels(&self.state, &target)?;
                let bytes = serialize_conll(&predictions).into_bytes();
                write_bytes(&self.dir.join(PREDICTIONS), &bytes)?;
                record.outputs.push(Artifact {
                    name: "predictions".into(),
                    role: None,
                    path: PREDICTIONS.into(),
                    sha256: sha256_hex(&bytes),
                    records: predictions.len(),
                });
                self.predictions = Some(predictions);
                Ok(record)
            }
        }
    }
}

/// Tag the final model of a completed run carries.
pub fn expected_final_tag(mode: Mode, iterations: u32) -> StageTag {
    match mode {
        Mode::Tof => StageTag::NerIter(iterations),
        Mode::TofNoContinual => StageTag::NerIter(0),
        Mode::TofMrcOnly | Mode::AdaptabertBaseline => StageTag::Ner,
    }
}
