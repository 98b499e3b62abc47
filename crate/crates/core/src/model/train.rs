//! Mini-batch Adam over one task head and the shared encoder.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HeadKind, ModelError, ModelParams, ModelState};
use crate::corpus::{MrcExample, TaggedSentence};
use crate::masking::MaskedInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Hyperparams {
    /// Batch size for each task when the caller gives none: 32 for MLM,
    /// 16 for MRC, 64 for NER.
    pub fn default_batch_size(kind: HeadKind) -> usize {
        match kind {
            HeadKind::Mlm => 32,
            HeadKind::Mrc => 16,
            HeadKind::Ner => 64,
        }
    }

    pub fn for_head(kind: HeadKind, learning_rate: f64, epochs: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            batch_size: Self::default_batch_size(kind),
            epochs,
            seed,
            max_grad_norm: Some(1.0),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::Hyperparams(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Hyperparams("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Training data for one stage, borrowed from the caller.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Mlm(&'a [MaskedInstance]),
    Mrc(&'a [MrcExample]),
    Ner(&'a [TaggedSentence]),
}

impl TrainData<'_> {
    pub fn kind(&self) -> HeadKind {
        match self {
            TrainData::Mlm(_) => HeadKind::Mlm,
            TrainData::Mrc(_) => HeadKind::Mrc,
            TrainData::Ner(_) => HeadKind::Ner,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TrainData::Mlm(d) => d.len(),
            TrainData::Mrc(d) => d.len(),
            TrainData::Ner(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

struct Adam {
    m: ModelParams,
    v: ModelParams,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &mut ModelParams) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let lr = self.lr;
        let ps = params.tensors_mut();
        let gs = grads.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(ms).zip(vs) {
            let (p, g, m, v): (&mut Array2<f64>, &Array2<f64>, &mut Array2<f64>, &mut Array2<f64>) =
                (p.1, g.1, m.1, v.1);
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * g;
                    *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                });
        }
    }
}

fn clip(grads: &mut ModelParams, max_norm: f64) {
    let mut tensors = grads.tensors_mut();
    let norm = tensors
        .iter()
        .map(|(_, t)| t.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for (_, t) in tensors.iter_mut() {
            t.mapv_inplace(|x| x * scale);
        }
    }
}

/// Fine-tunes `state` on `data` with the head matching the data kind,
/// attaching a fresh head (seeded from `hp.seed`) if the state has none.
///
/// Shuffling derives only from `hp.seed`, so identical inputs give
/// bit-identical parameters.
pub fn train_stage(
    state: &ModelState,
    data: TrainData<'_>,
    hp: &Hyperparams,
) -> Result<(ModelState, LossCurve), ModelError> {
    hp.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let kind = data.kind();
    let mut state = state.clone();
    state.ensure_head(kind, hp.seed ^ 0x5eed_4ead);
    let mut curve = LossCurve::default();
    if hp.epochs == 0 {
        return Ok((state, curve));
    }
    let mut adam = Adam::new(&state.params, hp.learning_rate);
    let mut grads = state.params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(hp.batch_size) {
            grads.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += match data {
                    TrainData::Mlm(d) => state.accumulate_mlm(&d[i], weight, &mut grads)?,
                    TrainData::Mrc(d) => state.accumulate_mrc(&d[i], weight, &mut grads)?,
                    TrainData::Ner(d) => {
                        state.accumulate_ner(&d[i].tokens, &d[i].tags, weight, &mut grads)?
                    }
                };
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    step: curve.steps,
                    loss: batch_loss,
                });
            }
            if let Some(max) = hp.max_grad_norm {
                clip(&mut grads, max);
            }
            adam.step(&mut state.params, &mut grads);
            curve.steps += 1;
            epoch_total += batch_loss;
        }
        curve.epoch_losses.push(epoch_total / data.len() as f64);
    }
    Ok((state, curve))
}
