//! Stage names, the per-mode stage plan and the run trace.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::Mode;
use crate::corpus::CorpusRole;
use crate::model::StageTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageName {
    Mlm,
    Mrc,
    Ner,
    PseudoGen,
    NerPseudo,
    Refresh,
    MrcLoop(u32),
    NerLoop(u32),
    RefreshLoop(u32),
    Predict,
}

impl StageName {
    /// The parameter tag a training stage produces.
    pub fn produces(self) -> Option<StageTag> {
        match self {
            StageName::Mlm => Some(StageTag::Mlm),
            StageName::Mrc => Some(StageTag::Mrc),
            StageName::Ner => Some(StageTag::Ner),
            StageName::NerPseudo => Some(StageTag::NerIter(0)),
            StageName::MrcLoop(i) => Some(StageTag::MrcIter(i)),
            StageName::NerLoop(i) => Some(StageTag::NerIter(i)),
            StageName::PseudoGen | StageName::Refresh | StageName::RefreshLoop(_) | StageName::Predict => None,
        }
    }

    pub fn trains(self) -> bool {
        self.produces().is_some()
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StageName::Mlm => f.write_str("MLM"),
            StageName::Mrc => f.write_str("MRC"),
            StageName::Ner => f.write_str("NER"),
            StageName::PseudoGen => f.write_str("PSEUDO_GEN"),
            StageName::NerPseudo => f.write_str("NER_PSEUDO"),
            StageName::Refresh => f.write_str("REFRESH"),
            StageName::MrcLoop(i) => write!(f, "MRC_LOOP_{i}"),
            StageName::NerLoop(i) => write!(f, "NER_LOOP_{i}"),
            StageName::RefreshLoop(i) => write!(f, "REFRESH_{i}"),
            StageName::Predict => f.write_str("PREDICT"),
        }
    }
}

impl FromStr for StageName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fixed = match s {
            "MLM" => Some(StageName::Mlm),
            "MRC" => Some(StageName::Mrc),
            "NER" => Some(StageName::Ner),
            "PSEUDO_GEN" => Some(StageName::PseudoGen),
            "NER_PSEUDO" => Some(StageName::NerPseudo),
            "REFRESH" => Some(StageName::Refresh),
            "PREDICT" => Some(StageName::Predict),
            _ => None,
        };
        if let Some(f) = fixed {
            return Ok(f);
        }
        let num = |p: &str| s.strip_prefix(p).and_then(|n| n.parse::<u32>().ok());
        num("MRC_LOOP_")
            .map(StageName::MrcLoop)
            .or_else(|| num("NER_LOOP_").map(StageName::NerLoop))
            .or_else(|| num("REFRESH_").map(StageName::RefreshLoop))
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

impl Serialize for StageName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StageName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Stage sequence for `mode` with `iterations` continual-learning rounds.
pub fn plan(mode: Mode, iterations: u32) -> Vec<StageName> {
    use StageName::*;
    match mode {
        Mode::AdaptabertBaseline => vec![Mlm, Ner, Predict],
        Mode::TofMrcOnly => vec![Mlm, Mrc, Ner, Predict],
        Mode::TofNoContinual => vec![Mlm, Mrc, Ner, PseudoGen, NerPseudo, Predict],
        Mode::Tof => {
            let mut out = vec![Mlm, Mrc, Ner, PseudoGen, NerPseudo, Refresh];
            for i in 1..=iterations {
                out.extend([MrcLoop(i), NerLoop(i), RefreshLoop(i)]);
            }
            out.push(Predict);
            out
        }
    }
}

/// A file written by a stage, with its content hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Dataset label, e.g. `t_ner_pseudo^(0)`.
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<CorpusRole>,
    /// Path relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: StageName,
    /// Labels of the datasets the stage read.
    pub consumed: Vec<String>,
    /// Tag of the parameters the stage started from or predicted with.
    pub source_tag: Option<StageTag>,
    /// Tag of the parameters the stage produced; `None` for stages that do
    /// not train.
    pub produced_tag: Option<StageTag>,
    pub dataset_sizes: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<Artifact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub mode: Mode,
    pub iterations: u32,
    pub seed: u64,
    pub records: Vec<StageRecord>,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PipelineTrace {
    pub fn new(mode: Mode, iterations: u32, seed: u64) -> Self {
        Self {
            mode,
            iterations,
            seed,
            records: Vec::new(),
            complete: false,
            failure: None,
        }
    }

    pub fn stage_names(&self) -> Vec<StageName> {
        self.records.iter().map(|r| r.stage).collect()
    }

    /// `(stage, source tag, produced tag)` for every record.
    pub fn handoffs(&self) -> Vec<(StageName, Option<StageTag>, Option<StageTag>)> {
        self.records
            .iter()
            .map(|r| (r.stage, r.source_tag, r.produced_tag))
            .collect()
    }

    /// Tag of the last produced parameters.
    pub fn final_tag(&self) -> Option<StageTag> {
        self.records.iter().rev().find_map(|r| r.produced_tag)
    }

    /// One line per stage, for terminal output.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "mode {} iterations {} seed {}\n",
            self.mode, self.iterations, self.seed
        );
        for (i, r) in self.records.iter().enumerate() {
            let tags = match (r.source_tag, r.produced_tag) {
                (Some(a), Some(b)) => format!("{a} -> {b}"),
                (Some(a), None) => format!("with {a}"),
                (None, Some(b)) => format!("-> {b}"),
                (None, None) => String::new(),
            };
            let sizes: Vec<String> = r.dataset_sizes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            out.push_str(&format!("{:>2} {:<12} {:<32} {}\n", i + 1, r.stage, tags, sizes.join(" ")));
        }
        if let Some(f) = &self.failure {
            out.push_str(&format!("failed: {f}\n"));
        } else if !self.complete {
            out.push_str("incomplete\n");
        }
        out
    }
}
