//! `tofner`: data conversion, staged training, prediction and scoring.
//!
//! Exit codes: 0 success, 1 usage, 2 validation, 3 training failure.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use tofner::convert::{mrc_normalize, ner_to_mrc, substitute_words, WordMap};
use tofner::corpus::io::{to_jsonl, write_atomic};
use tofner::corpus::{serialize_conll, strip_labels, LabelSet, TaggedSentence};
use tofner::eval::{aggregate_runs, entity_f1};
use tofner::model::checkpoint;
use tofner::pipeline::{self, generate_pseudo_labels, Progress, RunOptions};
use tofner::synthetic::{SyntheticConfig, SyntheticSuite};

use crate::config::{load_registry, read_ner, templates, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "tofner", version, about = "Zero-resource NER through staged fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert between data formats.
    #[command(subcommand)]
    Convert(ConvertCommand),
    /// Run the staged fine-tuning pipeline.
    Train(TrainArgs),
    /// Tag sentences with a checkpoint's NER head.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CoNLL or `.jsonl` sentences; tags, if present, are ignored.
        #[arg(long)]
        input: PathBuf,
        /// CoNLL output.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score predictions against gold at the entity level.
    Eval {
        #[arg(long)]
        gold: PathBuf,
        /// Repeat to aggregate several runs.
        #[arg(long, required = true)]
        pred: Vec<PathBuf>,
        #[command(flatten)]
        labels: LabelArgs,
        /// Print a JSON report instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, hide = true)]
        stop_after: Option<usize>,
    },
    /// Write the synthetic cue-word corpora and a matching config.
    #[command(hide = true)]
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
        #[arg(long, default_value_t = SyntheticConfig::default().source_labeled)]
        sentences: usize,
    },
}

#[derive(Debug, Args)]
struct LabelArgs {
    /// Entity types, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = ["PER", "LOC", "ORG", "MISC"].map(String::from))]
    labels: Vec<String>,
}

impl LabelArgs {
    fn label_set(&self) -> Result<LabelSet, Failure> {
        LabelSet::new(self.labels.iter().cloned()).map_err(|e| Failure::validation(anyhow!(e)))
    }
}

#[derive(Debug, Args)]
struct IoArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Subcommand)]
enum ConvertCommand {
    /// NER sentences to one MRC example per (sentence, entity type).
    Ner2mrc {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        labels: LabelArgs,
        /// JSON object mapping each entity type to its query.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// SQuAD-style JSON to token-level MRC line-JSON.
    NormalizeMrc {
        #[command(flatten)]
        io: IoArgs,
    },
    /// Replace every tag with `O`.
    StripLabels {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        labels: LabelArgs,
    },
    /// Word-by-word substitution through a two-column map.
    Substitute {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        labels: LabelArgs,
        #[arg(long)]
        word_map: PathBuf,
        /// Retry unmatched words in lower case.
        #[arg(long)]
        lowercase_fallback: bool,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: anyhow::Error) -> Self {
        Self { code: 2, error }
    }

    fn training(error: anyhow::Error) -> Self {
        Self { code: 3, error }
    }

    fn problems(list: Vec<String>) -> Self {
        Self::validation(anyhow!("configuration is invalid:\n  {}", list.join("\n  ")))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self::validation(error)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Convert(c) => convert(c),
        Command::Train(args) => train(args),
        Command::Predict {
            checkpoint,
            input,
            output,
        } => predict(&checkpoint, &input, &output),
        Command::Eval {
            gold,
            pred,
            labels,
            json,
        } => eval(&gold, &pred, &labels.label_set()?, json),
        Command::Resume { run_dir, stop_after } => {
            let progress = pipeline::resume(&run_dir, &RunOptions { stop_after })
                .map_err(|e| pipeline_failure(e, "resume failed"))?;
            report(&progress, &run_dir);
            Ok(())
        }
        Command::MakeSynthetic {
            out,
            seed,
            sentences,
        } => make_synthetic(&out, seed, sentences),
    }
}

fn write_out(path: &Path, text: &str) -> Result<(), Failure> {
    write_atomic(path, text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::validation)
}

fn read_ner_file(path: &Path, labels: &LabelSet) -> Result<Vec<TaggedSentence>, Failure> {
    read_ner(path, labels).map_err(|e| Failure::validation(anyhow!(e)))
}

/// CoNLL unless the output path ends in `.jsonl`.
fn write_ner(path: &Path, sentences: &[TaggedSentence]) -> Result<(), Failure> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        write_out(path, &to_jsonl(sentences))
    } else {
        write_out(path, &serialize_conll(sentences))
    }
}

fn convert(command: ConvertCommand) -> Result<(), Failure> {
    match command {
        ConvertCommand::Ner2mrc {
            io,
            labels,
            templates: tpl,
        } => {
            let ls = labels.label_set()?;
            let sentences = read_ner_file(&io.input, &ls)?;
            let t = templates(tpl.as_deref(), &ls).map_err(|e| Failure::validation(anyhow!(e)))?;
            let examples = ner_to_mrc(&sentences, &t).map_err(|e| Failure::validation(e.into()))?;
            write_out(&io.output, &to_jsonl(&examples))?;
            println!("{} sentences -> {} MRC examples", sentences.len(), examples.len());
        }
        ConvertCommand::NormalizeMrc { io } => {
            let text = fs::read_to_string(&io.input)
                .with_context(|| format!("reading {}", io.input.display()))?;
            let norm = mrc_normalize(&text)
                .with_context(|| format!("normalizing {}", io.input.display()))?;
            for w in &norm.warnings {
                log::warn!("example {}: {}", w.id, w.message);
            }
            write_out(&io.output, &to_jsonl(&norm.examples))?;
            println!(
                "{} MRC examples written, {} warnings",
                norm.examples.len(),
                norm.warnings.len()
            );
        }
        ConvertCommand::StripLabels { io, labels } => {
            let sentences = read_ner_file(&io.input, &labels.label_set()?)?;
            write_ner(&io.output, &strip_labels(&sentences))?;
            println!("{} sentences stripped", sentences.len());
        }
        ConvertCommand::Substitute {
            io,
            labels,
            word_map,
            lowercase_fallback,
        } => {
            let sentences = read_ner_file(&io.input, &labels.label_set()?)?;
            let text = fs::read_to_string(&word_map)
                .with_context(|| format!("reading {}", word_map.display()))?;
            let map = WordMap::parse(&text, lowercase_fallback)
                .with_context(|| format!("parsing {}", word_map.display()))?;
            write_ner(&io.output, &substitute_words(&sentences, &map))?;
            println!("{} sentences substituted with {} map entries", sentences.len(), map.len());
        }
    }
    Ok(())
}

fn env_vars() -> BTreeMap<String, String> {
    std::env::vars()
        .filter(|(k, _)| k.starts_with(config::ENV_PREFIX))
        .collect()
}

fn pipeline_failure(e: pipeline::PipelineError, what: &str) -> Failure {
    use pipeline::PipelineError as E;
    let code = match e.root() {
        E::Model(_) | E::Masking(_) => 3,
        _ => 2,
    };
    Failure {
        code,
        error: anyhow::Error::new(e).context(what.to_string()),
    }
}

fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &env_vars())
        .map_err(|e| Failure::validation(anyhow!(e)))?;
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    if args.mode.is_some() {
        cfg.mode = args.mode;
    }
    if args.iterations.is_some() {
        cfg.iterations = args.iterations;
    }
    if args.out.is_some() {
        cfg.out = args.out;
    }
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Failure::problems(problems));
    }
    let pc = cfg.pipeline_config().map_err(Failure::problems)?;
    let tpl = templates(cfg.templates.as_deref(), &pc.label_set).map_err(|e| Failure::problems(vec![e]))?;
    let registry = load_registry(&cfg, &pc.label_set).map_err(Failure::problems)?;
    let out = cfg.out.clone().expect("validated");
    let progress = pipeline::run_tof(&registry, &tpl, &pc, &out, &RunOptions { stop_after: args.stop_after })
        .map_err(|e| pipeline_failure(e, "training failed"))?;
    report(&progress, &out);
    Ok(())
}

fn report(progress: &Progress, dir: &Path) {
    print!("{}", progress.trace().summary());
    match progress {
        Progress::Complete(o) => println!(
            "run complete: {} predictions in {}",
            o.predictions.len(),
            dir.join("predictions.conll").display()
        ),
        Progress::Stopped { trace } => println!(
            "stopped after {} stages; continue with `tofner resume --run-dir {}`",
            trace.records.len(),
            dir.display()
        ),
    }
}

fn predict(ckpt: &Path, input: &Path, output: &Path) -> Result<(), Failure> {
    let (state, _) = checkpoint::load(ckpt, None)
        .with_context(|| format!("loading {}", ckpt.display()))?;
    let sentences = read_ner_file(input, &state.label_set)?;
    let tagged = generate_pseudo_labels(&state, &sentences)
        .map_err(|e| Failure::training(anyhow::Error::new(e).context("prediction failed")))?;
    write_out(output, &serialize_conll(&tagged))?;
    println!("{} sentences tagged with {}", tagged.len(), state.tag);
    Ok(())
}

fn eval(gold: &Path, preds: &[PathBuf], labels: &LabelSet, json: bool) -> Result<(), Failure> {
    let gold_sents = read_ner_file(gold, labels)?;
    let mut scores = Vec::new();
    for p in preds {
        let pred_sents = read_ner_file(p, labels)?;
        let score = entity_f1(&gold_sents, &pred_sents)
            .with_context(|| format!("scoring {}", p.display()))?;
        scores.push(score);
    }
    let agg = aggregate_runs(&scores).map_err(|e| Failure::validation(e.into()))?;
    if json {
        let report = serde_json::json!({ "runs": scores, "aggregate": agg });
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        for (p, s) in preds.iter().zip(&scores) {
            println!("{}", p.display());
            print!("{}", s.table());
        }
        println!("F1 {agg}");
    }
    Ok(())
}

fn make_synthetic(out: &Path, seed: u64, sentences: usize) -> Result<(), Failure> {
    let cfg = SyntheticConfig {
        seed,
        source_labeled: sentences,
        source_unlabeled: sentences,
        ..SyntheticConfig::default()
    };
    let suite = SyntheticSuite::generate(&cfg).map_err(|e| Failure::validation(e.into()))?;
    suite
        .write_dir(out)
        .with_context(|| format!("writing {}", out.display()))?;
    let toml = format!(
        "# Synthetic cue-word suite.\n\
         out = \"run\"\n\
         preset = \"desk\"\n\
         mode = \"TOF\"\n\
         iterations = 1\n\
         seed = {seed}\n\
         t_ner_unlabeled = \"t_ner_unlabeled.conll\"\n\
         s_ner_unlabeled = \"s_ner_unlabeled.conll\"\n\
         s_ner = \"s_ner.conll\"\n\
         t_mrc = \"t_mrc.jsonl\"\n\
         s_mrc = \"s_mrc.jsonl\"\n"
    );
    write_out(&out.join("run.toml"), &toml)?;
    println!(
        "synthetic suite written to {} (held-out gold: t_test.conll)",
        out.display()
    );
    Ok(())
}
