//! Entity-level precision, recall and F1, and multi-run aggregation.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{tags_to_spans, Span, TaggedSentence};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("gold has {gold} sentences but predictions have {pred}")]
    SentenceCount { gold: usize, pred: usize },
    #[error("sentence {id}: gold has {gold} tokens but prediction has {pred}")]
    TokenCount { id: String, gold: usize, pred: usize },
    #[error("sentence {id}: {side} tags are not BIO-valid at index {index}")]
    InvalidBio {
        id: String,
        side: &'static str,
        index: usize,
    },
    #[error("no scores to aggregate")]
    NoScores,
}

/// Micro-averaged entity counts and the derived ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl PrfScore {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }

    /// Fixed-width text table.
    pub fn table(&self) -> String {
        format!(
            "{:<10}{:>10}{:>10}{:>10}\n{:<10}{:>10.4}{:>10.4}{:>10.4}\n{:<10}{:>10}{:>10}{:>10}\n",
            "", "precision", "recall", "f1",
            "entities", self.precision, self.recall, self.f1,
            "counts", format!("p={}", self.predicted), format!("g={}", self.gold), format!("c={}", self.correct),
        )
    }
}

fn spans(s: &TaggedSentence, side: &'static str) -> Result<Vec<Span>, EvalError> {
    tags_to_spans(&s.tags).map_err(|e| match e {
        crate::corpus::CorpusError::InvalidBio { index } => EvalError::InvalidBio {
            id: s.id.clone(),
            side,
            index,
        },
        _ => unreachable!("tags_to_spans only reports BIO violations"),
    })
}

/// An entity is correct iff its type, start and end all match a gold entity
/// of the same sentence.
pub fn entity_f1(gold: &[TaggedSentence], pred: &[TaggedSentence]) -> Result<PrfScore, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::SentenceCount {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut n_gold, mut n_pred, mut n_correct) = (0, 0, 0);
    for (g, p) in gold.iter().zip(pred) {
        if g.tags.len() != p.tags.len() {
            return Err(EvalError::TokenCount {
                id: g.id.clone(),
                gold: g.tags.len(),
                pred: p.tags.len(),
            });
        }
        let gs: HashSet<Span> = spans(g, "gold")?.into_iter().collect();
        let ps = spans(p, "predicted")?;
        n_gold += gs.len();
        n_pred += ps.len();
        n_correct += ps.iter().filter(|s| gs.contains(s)).count();
    }
    Ok(PrfScore::from_counts(n_gold, n_pred, n_correct))
}

/// Mean and sample standard deviation of F1 over repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub mean_f1: f64,
    pub std_f1: f64,
    pub runs: usize,
    /// Set when only one run was given; `std_f1` is then 0.
    pub single_run: bool,
}

impl RunAggregate {
    pub fn mean_rounded(&self) -> f64 {
        round4(self.mean_f1)
    }

    pub fn std_rounded(&self) -> f64 {
        round4(self.std_f1)
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Percentages with two decimals, e.g. `80.35 (± 0.29)`.
impl fmt::Display for RunAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} (± {:.2})", 100.0 * self.mean_f1, 100.0 * self.std_f1)?;
        if self.single_run {
            f.write_str(" [single run]")?;
        }
        Ok(())
    }
}

pub fn aggregate_runs(scores: &[PrfScore]) -> Result<RunAggregate, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::NoScores);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().map(|s| s.f1).sum::<f64>() / n;
    let std = if scores.len() > 1 {
        (scores.iter().map(|s| (s.f1 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RunAggregate {
        mean_f1: mean,
        std_f1: std,
        runs: scores.len(),
        single_run: scores.len() == 1,
    })
}
