//! Forward and backward passes of the built-in encoder.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};

use super::params::{EncoderParams, LayerParams};

pub(crate) struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Array2<f64>,
    ctx: Array2<f64>,
    u: Array2<f64>,
    f: Array2<f64>,
}

pub(crate) struct EncoderCache {
    ids: Vec<usize>,
    positions: Vec<usize>,
    layers: Vec<LayerCache>,
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

/// Row `i` of the result is row `i - 1` of `h` (zeros for the first row).
fn shift_down(h: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    let n = h.nrows();
    if n > 1 {
        out.slice_mut(s![1.., ..]).assign(&h.slice(s![..n - 1, ..]));
    }
    out
}

/// Row `i` of the result is row `i + 1` of `h` (zeros for the last row).
fn shift_up(h: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    let n = h.nrows();
    if n > 1 {
        out.slice_mut(s![..n - 1, ..]).assign(&h.slice(s![1.., ..]));
    }
    out
}

fn add_matmul(acc: &mut Array2<f64>, a: ArrayView2<f64>, b: ArrayView2<f64>) {
    general_mat_mul(1.0, &a, &b, 1.0, acc);
}

fn add_colsum(acc: &mut Array2<f64>, g: &Array2<f64>) {
    let sum = g.sum_axis(Axis(0));
    acc.row_mut(0).scaled_add(1.0, &sum);
}

fn layer_forward(p: &LayerParams, h: Array2<f64>) -> (Array2<f64>, LayerCache) {
    let scale = 1.0 / (h.ncols() as f64).sqrt();
    let q = h.dot(&p.wq);
    let k = h.dot(&p.wk);
    let v = h.dot(&p.wv);
    let attn = softmax_rows(&(q.dot(&k.t()) * scale));
    let ctx = attn.dot(&v);
    let mut u = h.clone();
    add_matmul(&mut u, ctx.view(), p.wo.view());
    add_matmul(&mut u, shift_down(&h).view(), p.w_left.view());
    add_matmul(&mut u, shift_up(&h).view(), p.w_right.view());
    let f = (u.dot(&p.w1) + &p.b1).mapv(f64::tanh);
    let mut out = u.clone();
    add_matmul(&mut out, f.view(), p.w2.view());
    out += &p.b2;
    let cache = LayerCache {
        input: h,
        q,
        k,
        v,
        attn,
        ctx,
        u,
        f,
    };
    (out, cache)
}

fn layer_backward(
    p: &LayerParams,
    c: &LayerCache,
    d_out: &Array2<f64>,
    g: &mut LayerParams,
) -> Array2<f64> {
    let scale = 1.0 / (c.input.ncols() as f64).sqrt();

    add_colsum(&mut g.b2, d_out);
    add_matmul(&mut g.w2, c.f.t(), d_out.view());
    let df = d_out.dot(&p.w2.t());
    let dz = df * &c.f.mapv(|f| 1.0 - f * f);
    add_colsum(&mut g.b1, &dz);
    add_matmul(&mut g.w1, c.u.t(), dz.view());
    let mut du = d_out.clone();
    add_matmul(&mut du, dz.view(), p.w1.t());

    let prev = shift_down(&c.input);
    let next = shift_up(&c.input);
    add_matmul(&mut g.wo, c.ctx.t(), du.view());
    add_matmul(&mut g.w_left, prev.t(), du.view());
    add_matmul(&mut g.w_right, next.t(), du.view());
    let dctx = du.dot(&p.wo.t());
    let mut dh = du.clone();
    dh += &shift_up(&du.dot(&p.w_left.t()));
    dh += &shift_down(&du.dot(&p.w_right.t()));

    let da = dctx.dot(&c.v.t());
    let dv = c.attn.t().dot(&dctx);
    let row_dot = (&da * &c.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
    let ds = (&c.attn * &(da - &row_dot)) * scale;
    let dq = ds.dot(&c.k);
    let dk = ds.t().dot(&c.q);

    add_matmul(&mut g.wq, c.input.t(), dq.view());
    add_matmul(&mut g.wk, c.input.t(), dk.view());
    add_matmul(&mut g.wv, c.input.t(), dv.view());
    add_matmul(&mut dh, dq.view(), p.wq.t());
    add_matmul(&mut dh, dk.view(), p.wk.t());
    add_matmul(&mut dh, dv.view(), p.wv.t());
    dh
}

pub(crate) fn forward(p: &EncoderParams, ids: &[usize]) -> (Array2<f64>, EncoderCache) {
    let max_pos = p.position_embedding.nrows();
    let positions: Vec<usize> = (0..ids.len()).map(|i| i.min(max_pos - 1)).collect();
    let mut h = Array2::zeros((ids.len(), p.d_model()));
    for (i, (&id, &pos)) in ids.iter().zip(&positions).enumerate() {
        let mut row = h.row_mut(i);
        row.assign(&p.token_embedding.row(id));
        row += &p.position_embedding.row(pos);
    }
    let mut layers = Vec::with_capacity(p.layers.len());
    for layer in &p.layers {
        let (out, cache) = layer_forward(layer, h);
        layers.push(cache);
        h = out;
    }
    let cache = EncoderCache {
        ids: ids.to_vec(),
        positions,
        layers,
    };
    (h, cache)
}

/// Evaluation-only forward pass.
pub(crate) fn forward_eval(p: &EncoderParams, ids: &[usize]) -> Array2<f64> {
    forward(p, ids).0
}

/// Accumulates parameter gradients for `d_out` (gradient of the loss with
/// respect to the encoder output).
pub(crate) fn backward(
    p: &EncoderParams,
    cache: &EncoderCache,
    d_out: Array2<f64>,
    g: &mut EncoderParams,
) {
    let mut d = d_out;
    for ((layer, lc), lg) in p
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(g.layers.iter_mut())
        .rev()
    {
        d = layer_backward(layer, lc, &d, lg);
    }
    for (i, (&id, &pos)) in cache.ids.iter().zip(&cache.positions).enumerate() {
        let row = d.row(i);
        g.token_embedding.row_mut(id).scaled_add(1.0, &row);
        g.position_embedding.row_mut(pos).scaled_add(1.0, &row);
    }
}
