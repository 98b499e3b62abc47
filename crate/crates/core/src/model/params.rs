//! Parameter tensors of the built-in encoder and the task heads.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shape of the built-in encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Width of the contextual embeddings.
    pub d_model: usize,
    pub layers: usize,
    /// Hidden width of the per-layer feed-forward block.
    pub ff_width: usize,
    /// Positions beyond this share the last positional embedding.
    pub max_positions: usize,
    /// Reuse the token embedding matrix as the MLM output projection.
    pub tie_mlm_weights: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            ff_width: 128,
            max_positions: 256,
            tie_mlm_weights: false,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let a = std * 3f64.sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

/// One mixing layer: single-head self-attention plus explicit left/right
/// neighbour projections, followed by a tanh feed-forward block. Both blocks
/// are residual.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub w_left: Array2<f64>,
    pub w_right: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let f = cfg.ff_width;
        let s = 1.0 / (d as f64).sqrt();
        Self {
            wq: uniform(rng, d, d, s),
            wk: uniform(rng, d, d, s),
            wv: uniform(rng, d, d, s),
            wo: uniform(rng, d, d, 0.5 * s),
            w_left: uniform(rng, d, d, 0.5 * s),
            w_right: uniform(rng, d, d, 0.5 * s),
            w1: uniform(rng, d, f, s),
            b1: Array2::zeros((1, f)),
            w2: uniform(rng, f, d, 0.5 / (f as f64).sqrt()),
            b2: Array2::zeros((1, d)),
        }
    }

    fn tensors_mut(&mut self) -> [(&'static str, &mut Array2<f64>); 10] {
        [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("w_left", &mut self.w_left),
            ("w_right", &mut self.w_right),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

impl EncoderParams {
    pub fn init(cfg: &EncoderConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let token_embedding = uniform(&mut rng, vocab_size, cfg.d_model, 0.5);
        let position_embedding = uniform(&mut rng, cfg.max_positions, cfg.d_model, 0.5);
        let layers = (0..cfg.layers).map(|_| LayerParams::init(cfg, &mut rng)).collect();
        Self {
            token_embedding,
            position_embedding,
            layers,
        }
    }

    pub fn d_model(&self) -> usize {
        self.token_embedding.ncols()
    }
}

/// Token classifier over the tag vocabulary: `softmax(h W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NerHead {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl NerHead {
    pub fn init(d_model: usize, num_tags: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w: uniform(&mut rng, d_model, num_tags, 1.0 / (d_model as f64).sqrt()),
            b: Array2::zeros((1, num_tags)),
        }
    }
}

/// Two-way start and end classifiers, without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcHead {
    pub w_start: Array2<f64>,
    pub w_end: Array2<f64>,
}

impl MrcHead {
    pub fn init(d_model: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (d_model as f64).sqrt();
        Self {
            w_start: uniform(&mut rng, d_model, 2, s),
            w_end: uniform(&mut rng, d_model, 2, s),
        }
    }
}

/// Vocabulary projection. `w` is `None` when tied to the token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHead {
    pub w: Option<Array2<f64>>,
    pub b: Array2<f64>,
}

impl MlmHead {
    pub fn init(d_model: usize, vocab_size: usize, tied: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            w: (!tied).then(|| uniform(&mut rng, d_model, vocab_size, 1.0 / (d_model as f64).sqrt())),
            b: Array2::zeros((1, vocab_size)),
        }
    }
}

/// Every trainable tensor of a model. Also used as the gradient and
/// optimizer-moment container, which share its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub ner: Option<NerHead>,
    pub mrc: Option<MrcHead>,
    pub mlm: Option<MlmHead>,
}

impl ModelParams {
    /// Named tensors in a fixed order.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("encoder.token_embedding".into(), &mut self.encoder.token_embedding),
            ("encoder.position_embedding".into(), &mut self.encoder.position_embedding),
        ];
        for (i, layer) in self.encoder.layers.iter_mut().enumerate() {
            for (name, t) in layer.tensors_mut() {
                out.push((format!("encoder.layers.{i}.{name}"), t));
            }
        }
        if let Some(h) = self.ner.as_mut() {
            out.push(("ner.w".into(), &mut h.w));
            out.push(("ner.b".into(), &mut h.b));
        }
        if let Some(h) = self.mrc.as_mut() {
            out.push(("mrc.w_start".into(), &mut h.w_start));
            out.push(("mrc.w_end".into(), &mut h.w_end));
        }
        if let Some(h) = self.mlm.as_mut() {
            if let Some(w) = h.w.as_mut() {
                out.push(("mlm.w".into(), w));
            }
            out.push(("mlm.b".into(), &mut h.b));
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, Array2<f64>)> {
        let mut copy = self.clone();
        copy.tensors_mut()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }

    pub fn fill(&mut self, value: f64) {
        for (_, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.clone().tensors_mut().iter().map(|(_, t)| t.len()).sum()
    }
}
