//! The order-free encoder classifier: token embeddings (no positional
//! table anywhere), stacked self-attention layers with a key-padding mask,
//! and a small MLP head read off the [CLS] position.
//!
//! Everything computes in f64 — forward, backward, and the optimizer state —
//! so analytic gradients can be validated against central finite differences
//! at tight tolerances. The backward pass mirrors the forward pass over
//! per-sample caches; no autodiff framework is involved.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::rng::{stream_rng, Stream};
use crate::samples::PAD_ID;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Architecture and training-time hyperparameters of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub l_ext: usize,
    pub l_int: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Laptop-scale profile: quick to train, strong enough for small graphs.
    pub fn desk(vocab_size: usize, l_ext: usize, l_int: usize, seed: u64) -> Self {
        EncoderConfig {
            num_layers: 2,
            num_heads: 4,
            model_dim: 64,
            ffn_dim: 128,
            mlp_hidden: 64,
            vocab_size,
            l_ext,
            l_int,
            dropout: 0.1,
            seed,
        }
    }

    /// Full-scale profile.
    pub fn full(vocab_size: usize, l_ext: usize, l_int: usize, seed: u64) -> Self {
        EncoderConfig {
            num_layers: 9,
            num_heads: 12,
            model_dim: 768,
            ffn_dim: 3072,
            mlp_hidden: 512,
            vocab_size,
            l_ext,
            l_int,
            dropout: 0.1,
            seed,
        }
    }

    pub fn max_seq_len(&self) -> usize {
        2 + self.l_ext + self.l_int
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadEncoderConfig(msg));
        if self.model_dim == 0
            || self.num_layers == 0
            || self.num_heads == 0
            || self.ffn_dim == 0
            || self.mlp_hidden == 0
        {
            return bad("all dimensions must be at least 1".to_string());
        }
        if !self.model_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "model_dim {} not divisible by num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.vocab_size < 4 {
            return bad(format!(
                "vocab_size {} leaves no room for real tokens",
                self.vocab_size
            ));
        }
        if self.l_ext == 0 || self.l_int == 0 {
            return bad("pad lengths must be at least 1".to_string());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Weights of one encoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_scale: Matrix,
    pub ln1_offset: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_scale: Matrix,
    pub ln2_offset: Matrix,
}

/// All weights of one model. There is deliberately no positional table:
/// token identity is the only thing a position contributes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub head_w1: Matrix,
    pub head_b1: Matrix,
    pub head_w2: Matrix,
    pub head_b2: Matrix,
}

impl ModelParams {
    /// Gaussian(0, 0.02²) weights, zero biases and norm offsets, unit norm
    /// scales; drawn from the seeded init stream in a fixed order.
    pub fn init(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = stream_rng(cfg.seed, Stream::Init);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut gaussian = |rows: usize, cols: usize| {
            let data = (0..rows * cols).map(|_| normal.sample(&mut rng)).collect();
            Matrix::from_vec(rows, cols, data)
        };
        let d = cfg.model_dim;
        let layers = (0..cfg.num_layers)
            .map(|_| {
                let mut ones = Matrix::zeros(1, d);
                ones.fill(1.0);
                let ones2 = ones.clone();
                LayerParams {
                    wq: gaussian(d, d),
                    bq: Matrix::zeros(1, d),
                    wk: gaussian(d, d),
                    bk: Matrix::zeros(1, d),
                    wv: gaussian(d, d),
                    bv: Matrix::zeros(1, d),
                    wo: gaussian(d, d),
                    bo: Matrix::zeros(1, d),
                    ln1_scale: ones,
                    ln1_offset: Matrix::zeros(1, d),
                    w1: gaussian(d, cfg.ffn_dim),
                    b1: Matrix::zeros(1, cfg.ffn_dim),
                    w2: gaussian(cfg.ffn_dim, d),
                    b2: Matrix::zeros(1, d),
                    ln2_scale: ones2,
                    ln2_offset: Matrix::zeros(1, d),
                }
            })
            .collect();
        Ok(ModelParams {
            embedding: gaussian(cfg.vocab_size, d),
            layers,
            head_w1: gaussian(d, cfg.mlp_hidden),
            head_b1: Matrix::zeros(1, cfg.mlp_hidden),
            head_w2: gaussian(cfg.mlp_hidden, 1),
            head_b2: Matrix::zeros(1, 1),
        })
    }

    /// Same shapes, all zero — gradient and optimizer-state buffers.
    pub fn zeros_like(cfg: &EncoderConfig) -> Self {
        let d = cfg.model_dim;
        let layers = (0..cfg.num_layers)
            .map(|_| LayerParams {
                wq: Matrix::zeros(d, d),
                bq: Matrix::zeros(1, d),
                wk: Matrix::zeros(d, d),
                bk: Matrix::zeros(1, d),
                wv: Matrix::zeros(d, d),
                bv: Matrix::zeros(1, d),
                wo: Matrix::zeros(d, d),
                bo: Matrix::zeros(1, d),
                ln1_scale: Matrix::zeros(1, d),
                ln1_offset: Matrix::zeros(1, d),
                w1: Matrix::zeros(d, cfg.ffn_dim),
                b1: Matrix::zeros(1, cfg.ffn_dim),
                w2: Matrix::zeros(cfg.ffn_dim, d),
                b2: Matrix::zeros(1, d),
                ln2_scale: Matrix::zeros(1, d),
                ln2_offset: Matrix::zeros(1, d),
            })
            .collect();
        ModelParams {
            embedding: Matrix::zeros(cfg.vocab_size, d),
            layers,
            head_w1: Matrix::zeros(d, cfg.mlp_hidden),
            head_b1: Matrix::zeros(1, cfg.mlp_hidden),
            head_w2: Matrix::zeros(cfg.mlp_hidden, 1),
            head_b2: Matrix::zeros(1, 1),
        }
    }

    /// Named tensors in a fixed order (checkpoint manifest, optimizer zip).
    pub fn visit(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> =
            vec![("embedding".to_string(), &self.embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            let entries: [(&str, &Matrix); 16] = [
                ("attn.wq", &l.wq),
                ("attn.bq", &l.bq),
                ("attn.wk", &l.wk),
                ("attn.bk", &l.bk),
                ("attn.wv", &l.wv),
                ("attn.bv", &l.bv),
                ("attn.wo", &l.wo),
                ("attn.bo", &l.bo),
                ("ln1.scale", &l.ln1_scale),
                ("ln1.offset", &l.ln1_offset),
                ("ffn.w1", &l.w1),
                ("ffn.b1", &l.b1),
                ("ffn.w2", &l.w2),
                ("ffn.b2", &l.b2),
                ("ln2.scale", &l.ln2_scale),
                ("ln2.offset", &l.ln2_offset),
            ];
            for (suffix, m) in entries {
                out.push((format!("layers.{i}.{suffix}"), m));
            }
        }
        out.push(("head.w1".to_string(), &self.head_w1));
        out.push(("head.b1".to_string(), &self.head_b1));
        out.push(("head.w2".to_string(), &self.head_w2));
        out.push(("head.b2".to_string(), &self.head_b2));
        out
    }

    /// Mutable twin of `visit`, same order.
    pub fn visit_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out: Vec<(String, &mut Matrix)> =
            vec![("embedding".to_string(), &mut self.embedding)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let entries: [(&str, &mut Matrix); 16] = [
                ("attn.wq", &mut l.wq),
                ("attn.bq", &mut l.bq),
                ("attn.wk", &mut l.wk),
                ("attn.bk", &mut l.bk),
                ("attn.wv", &mut l.wv),
                ("attn.bv", &mut l.bv),
                ("attn.wo", &mut l.wo),
                ("attn.bo", &mut l.bo),
                ("ln1.scale", &mut l.ln1_scale),
                ("ln1.offset", &mut l.ln1_offset),
                ("ffn.w1", &mut l.w1),
                ("ffn.b1", &mut l.b1),
                ("ffn.w2", &mut l.w2),
                ("ffn.b2", &mut l.b2),
                ("ln2.scale", &mut l.ln2_scale),
                ("ln2.offset", &mut l.ln2_offset),
            ];
            for (suffix, m) in entries {
                out.push((format!("layers.{i}.{suffix}"), m));
            }
        }
        out.push(("head.w1".to_string(), &mut self.head_w1));
        out.push(("head.b1".to_string(), &mut self.head_b1));
        out.push(("head.w2".to_string(), &mut self.head_w2));
        out.push(("head.b2".to_string(), &mut self.head_b2));
        out
    }

    /// θ += factor · other, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, factor: f64) {
        for ((_, a), (_, b)) in self.visit_mut().into_iter().zip(other.visit()) {
            for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += factor * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.visit().iter().all(|(_, m)| m.is_finite())
    }
}

// ---------------------------------------------------------------------------
// primitive layers
// ---------------------------------------------------------------------------

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy straight from the logit; never saturates.
pub fn bce_with_logits(logit: f64, label: bool) -> f64 {
    let y = label as u8 as f64;
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

const GELU_C: f64 = 0.044715;
/// √(2/π), the tanh-approximation constant.
const GELU_S: f64 = 0.797_884_560_802_865_4_f64;

fn gelu(x: f64) -> f64 {
    let u = GELU_S * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_deriv(x: f64) -> f64 {
    let u = GELU_S * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_S * (1.0 + 3.0 * GELU_C * x * x)
}

fn add_bias(m: &mut Matrix, bias: &Matrix) {
    for i in 0..m.rows() {
        for (x, &b) in m.row_mut(i).iter_mut().zip(bias.row(0)) {
            *x += b;
        }
    }
}

struct LnCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Matrix, scale: &Matrix, offset: &Matrix) -> (Matrix, LnCache) {
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = Matrix::zeros(rows, cols);
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(inv);
        let xh = xhat.row_mut(i);
        let o = out.row_mut(i);
        for j in 0..cols {
            xh[j] = (row[j] - mean) * inv;
            o[j] = scale[(0, j)] * xh[j] + offset[(0, j)];
        }
    }
    (out, LnCache { xhat, inv_std })
}

/// dL/dx for a layer norm, accumulating scale/offset gradients in place.
fn layer_norm_backward(
    dy: &Matrix,
    cache: &LnCache,
    scale: &Matrix,
    d_scale: &mut Matrix,
    d_offset: &mut Matrix,
) -> Matrix {
    let (rows, cols) = (dy.rows(), dy.cols());
    let mut dx = Matrix::zeros(rows, cols);
    for i in 0..rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..cols {
            let dxh = dyr[j] * scale[(0, j)];
            m1 += dxh;
            m2 += dxh * xh[j];
            d_scale[(0, j)] += dyr[j] * xh[j];
            d_offset[(0, j)] += dyr[j];
        }
        m1 /= cols as f64;
        m2 /= cols as f64;
        let inv = cache.inv_std[i];
        let dxr = dx.row_mut(i);
        for j in 0..cols {
            let dxh = dyr[j] * scale[(0, j)];
            dxr[j] = (dxh - m1 - xh[j] * m2) * inv;
        }
    }
    dx
}

/// Inverted-dropout mask: entries are 0 or 1/(1−p).
fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Matrix {
    use rand::Rng;
    let keep = 1.0 / (1.0 - p);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn apply_mask(m: &mut Matrix, mask: &Matrix) {
    for (x, &s) in m.data_mut().iter_mut().zip(mask.data()) {
        *x *= s;
    }
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

/// Pure embedding lookup: one row per token, no positional term.
pub fn embed(params: &ModelParams, tokens: &[usize]) -> Result<Matrix> {
    let vocab = params.embedding.rows();
    let d = params.embedding.cols();
    let mut out = Matrix::zeros(tokens.len(), d);
    for (t, &tok) in tokens.iter().enumerate() {
        if tok >= vocab {
            return Err(Error::IndexOutOfRange {
                kind: "token",
                index: tok,
                size: vocab,
            });
        }
        out.row_mut(t).copy_from_slice(params.embedding.row(tok));
    }
    Ok(out)
}

struct LayerCache {
    x_in: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<Matrix>,
    ctx: Matrix,
    attn_drop: Option<Matrix>,
    ln1: LnCache,
    y: Matrix,
    ffn_pre: Matrix,
    ffn_act: Matrix,
    ffn_drop: Option<Matrix>,
    ln2: LnCache,
    out: Matrix,
}

/// Everything the backward pass needs from one sample's forward pass.
pub struct ForwardCache {
    tokens: Vec<usize>,
    emb_drop: Option<Matrix>,
    layers: Vec<LayerCache>,
    cls: Vec<f64>,
    head_pre: Vec<f64>,
    head_act: Vec<f64>,
    pub logit: f64,
}

impl ForwardCache {
    /// Attention weights of one layer, one matrix per head (test access).
    pub fn attention(&self, layer: usize) -> &[Matrix] {
        &self.layers[layer].attn
    }
}

fn run_layer(
    params: &LayerParams,
    cfg: &EncoderConfig,
    x: &Matrix,
    mask: &[bool],
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> LayerCache {
    let seq = x.rows();
    let d = cfg.model_dim;
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut q = x.matmul(&params.wq);
    add_bias(&mut q, &params.bq);
    let mut k = x.matmul(&params.wk);
    add_bias(&mut k, &params.bk);
    let mut v = x.matmul(&params.wv);
    add_bias(&mut v, &params.bv);

    let mut attn = Vec::with_capacity(heads);
    let mut ctx = Matrix::zeros(seq, d);
    for h in 0..heads {
        let lo = h * dh;
        let hi = lo + dh;
        let mut weights = Matrix::zeros(seq, seq);
        for i in 0..seq {
            // scores over unmasked keys only; masked keys keep exact zeros
            let qrow = &q.row(i)[lo..hi];
            let mut max = f64::NEG_INFINITY;
            let wrow = weights.row_mut(i);
            for (j, &live) in mask.iter().enumerate() {
                if !live {
                    continue;
                }
                let krow = &k.row(j)[lo..hi];
                let s = qrow.iter().zip(krow).map(|(&a, &b)| a * b).sum::<f64>() * scale;
                wrow[j] = s;
                if s > max {
                    max = s;
                }
            }
            let mut norm = 0.0;
            for (j, &live) in mask.iter().enumerate() {
                if !live {
                    continue;
                }
                wrow[j] = (wrow[j] - max).exp();
                norm += wrow[j];
            }
            for (j, &live) in mask.iter().enumerate() {
                if live {
                    wrow[j] /= norm;
                }
            }
        }
        for i in 0..seq {
            for j in 0..seq {
                let w = weights[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let vrow = &v.row(j)[lo..hi];
                let crow = &mut ctx.row_mut(i)[lo..hi];
                for (c, &vv) in crow.iter_mut().zip(vrow) {
                    *c += w * vv;
                }
            }
        }
        attn.push(weights);
    }

    let mut attn_out = ctx.matmul(&params.wo);
    add_bias(&mut attn_out, &params.bo);
    let attn_drop = dropout.as_mut().map(|(rng, p)| {
        let m = dropout_mask(seq, d, *p, rng);
        apply_mask(&mut attn_out, &m);
        m
    });

    let mut sum1 = x.clone();
    sum1.add_assign(&attn_out);
    let (y, ln1) = layer_norm(&sum1, &params.ln1_scale, &params.ln1_offset);

    let mut ffn_pre = y.matmul(&params.w1);
    add_bias(&mut ffn_pre, &params.b1);
    let mut ffn_act = ffn_pre.clone();
    for u in ffn_act.data_mut() {
        *u = gelu(*u);
    }
    let mut ffn_out = ffn_act.matmul(&params.w2);
    add_bias(&mut ffn_out, &params.b2);
    let ffn_drop = dropout.as_mut().map(|(rng, p)| {
        let m = dropout_mask(seq, d, *p, rng);
        apply_mask(&mut ffn_out, &m);
        m
    });

    let mut sum2 = y.clone();
    sum2.add_assign(&ffn_out);
    let (out, ln2) = layer_norm(&sum2, &params.ln2_scale, &params.ln2_offset);

    LayerCache {
        x_in: x.clone(),
        q,
        k,
        v,
        attn,
        ctx,
        attn_drop,
        ln1,
        y,
        ffn_pre,
        ffn_act,
        ffn_drop,
        ln2,
        out,
    }
}

/// Full forward pass with caches; `dropout_rng` enables training-mode
/// dropout at `cfg.dropout`.
pub fn forward_cached(
    params: &ModelParams,
    cfg: &EncoderConfig,
    tokens: &[usize],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache> {
    let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();
    let mut x = embed(params, tokens)?;
    let use_dropout = cfg.dropout > 0.0 && dropout_rng.is_some();
    let emb_drop = if use_dropout {
        let rng = dropout_rng.as_deref_mut().expect("checked");
        let m = dropout_mask(x.rows(), x.cols(), cfg.dropout, rng);
        apply_mask(&mut x, &m);
        Some(m)
    } else {
        None
    };

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, lp) in params.layers.iter().enumerate() {
        let drop = if use_dropout {
            Some((dropout_rng.as_deref_mut().expect("checked"), cfg.dropout))
        } else {
            None
        };
        let cache = run_layer(lp, cfg, &x, &mask, drop);
        if !cache.out.is_finite() {
            return Err(Error::NonFinite(format!("encoder layer {l} output")));
        }
        x = cache.out.clone();
        layers.push(cache);
    }

    let cls: Vec<f64> = x.row(0).to_vec();
    let cls_m = Matrix::from_vec(1, cls.len(), cls.clone());
    let mut pre = cls_m.matmul(&params.head_w1);
    add_bias(&mut pre, &params.head_b1);
    let head_pre: Vec<f64> = pre.row(0).to_vec();
    let head_act: Vec<f64> = head_pre.iter().map(|&u| gelu(u)).collect();
    let act_m = Matrix::from_vec(1, head_act.len(), head_act.clone());
    let logit = act_m.matmul(&params.head_w2)[(0, 0)] + params.head_b2[(0, 0)];
    if !logit.is_finite() {
        return Err(Error::NonFinite("classifier logit".to_string()));
    }

    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        emb_drop,
        layers,
        cls,
        head_pre,
        head_act,
        logit,
    })
}

/// Eval-mode hidden states for externally supplied embeddings: the layer
/// stack alone, without the lookup or the head.
pub fn encoder_forward(
    params: &ModelParams,
    cfg: &EncoderConfig,
    embeddings: &Matrix,
    pad_mask: &[bool],
) -> Result<Matrix> {
    if embeddings.rows() != pad_mask.len() || embeddings.cols() != cfg.model_dim {
        return Err(Error::BadEncoderConfig(format!(
            "embeddings {}×{} do not match mask length {} and model_dim {}",
            embeddings.rows(),
            embeddings.cols(),
            pad_mask.len(),
            cfg.model_dim
        )));
    }
    let mut x = embeddings.clone();
    for (l, lp) in params.layers.iter().enumerate() {
        let cache = run_layer(lp, cfg, &x, pad_mask, None);
        if !cache.out.is_finite() {
            return Err(Error::NonFinite(format!("encoder layer {l} output")));
        }
        x = cache.out;
    }
    Ok(x)
}

/// Head alone: probability from a pooled vector.
pub fn classify(params: &ModelParams, cls: &[f64]) -> f64 {
    let cls_m = Matrix::from_vec(1, cls.len(), cls.to_vec());
    let mut pre = cls_m.matmul(&params.head_w1);
    add_bias(&mut pre, &params.head_b1);
    for u in pre.data_mut() {
        *u = gelu(*u);
    }
    let logit = pre.matmul(&params.head_w2)[(0, 0)] + params.head_b2[(0, 0)];
    sigmoid(logit)
}

/// Eval-mode logit for a tokenized sample.
pub fn forward_logit(params: &ModelParams, cfg: &EncoderConfig, tokens: &[usize]) -> Result<f64> {
    Ok(forward_cached(params, cfg, tokens, None)?.logit)
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

/// Accumulate dL/dθ into `grads` for one sample, given dL/dlogit.
pub fn backward(
    params: &ModelParams,
    cfg: &EncoderConfig,
    cache: &ForwardCache,
    d_logit: f64,
    grads: &mut ModelParams,
) {
    let d = cfg.model_dim;
    let seq = cache.tokens.len();
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    // --- head ---
    let act_m = Matrix::from_vec(1, cache.head_act.len(), cache.head_act.clone());
    for (g, &a) in grads.head_w2.data_mut().iter_mut().zip(act_m.row(0)) {
        *g += a * d_logit;
    }
    grads.head_b2[(0, 0)] += d_logit;
    let mut d_act = vec![0.0; cache.head_act.len()];
    for (da, &w) in d_act.iter_mut().zip(params.head_w2.data()) {
        *da = d_logit * w;
    }
    let d_pre: Vec<f64> = d_act
        .iter()
        .zip(&cache.head_pre)
        .map(|(&da, &u)| da * gelu_deriv(u))
        .collect();
    for (j, &dp) in d_pre.iter().enumerate() {
        grads.head_b1[(0, j)] += dp;
        for i in 0..d {
            grads.head_w1[(i, j)] += cache.cls[i] * dp;
        }
    }
    let mut d_cls = vec![0.0; d];
    for (i, dc) in d_cls.iter_mut().enumerate() {
        *dc = d_pre
            .iter()
            .enumerate()
            .map(|(j, &dp)| dp * params.head_w1[(i, j)])
            .sum();
    }

    // --- layer stack, reversed ---
    let mut dx = Matrix::zeros(seq, d);
    dx.row_mut(0).copy_from_slice(&d_cls);

    for (lp, lc, lg) in itertools_rev(&params.layers, &cache.layers, &mut grads.layers) {
        // layer norm 2
        let d_sum2 = layer_norm_backward(
            &dx,
            &lc.ln2,
            &lp.ln2_scale,
            &mut lg.ln2_scale,
            &mut lg.ln2_offset,
        );
        // residual: sum2 = y + dropout(ffn_out)
        let mut d_ffn_out = d_sum2.clone();
        if let Some(m) = &lc.ffn_drop {
            apply_mask(&mut d_ffn_out, m);
        }
        let mut dy = d_sum2;

        // ffn
        lg.w2.add_assign(&lc.ffn_act.matmul_at(&d_ffn_out));
        lg.b2.add_assign(&d_ffn_out.col_sums());
        let mut d_ffn_act = d_ffn_out.matmul_bt(&lp.w2);
        for (da, &u) in d_ffn_act.data_mut().iter_mut().zip(lc.ffn_pre.data()) {
            *da *= gelu_deriv(u);
        }
        lg.w1.add_assign(&lc.y.matmul_at(&d_ffn_act));
        lg.b1.add_assign(&d_ffn_act.col_sums());
        dy.add_assign(&d_ffn_act.matmul_bt(&lp.w1));

        // layer norm 1
        let d_sum1 = layer_norm_backward(
            &dy,
            &lc.ln1,
            &lp.ln1_scale,
            &mut lg.ln1_scale,
            &mut lg.ln1_offset,
        );
        // residual: sum1 = x + dropout(attn_out)
        let mut d_attn_out = d_sum1.clone();
        if let Some(m) = &lc.attn_drop {
            apply_mask(&mut d_attn_out, m);
        }
        let mut d_x_in = d_sum1;

        // output projection
        lg.wo.add_assign(&lc.ctx.matmul_at(&d_attn_out));
        lg.bo.add_assign(&d_attn_out.col_sums());
        let d_ctx = d_attn_out.matmul_bt(&lp.wo);

        // attention heads
        let mut dq = Matrix::zeros(seq, d);
        let mut dk = Matrix::zeros(seq, d);
        let mut dv = Matrix::zeros(seq, d);
        for h in 0..heads {
            let lo = h * dh;
            let hi = lo + dh;
            let weights = &lc.attn[h];
            for i in 0..seq {
                let dctx_row = &d_ctx.row(i)[lo..hi];
                // d(attn weights) and dV in one sweep; masked keys hold
                // exact zeros in `weights`, so they contribute nothing
                let mut d_w = vec![0.0; seq];
                for j in 0..seq {
                    let w = weights[(i, j)];
                    if w != 0.0 {
                        let vrow = &lc.v.row(j)[lo..hi];
                        d_w[j] = dctx_row.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                        let dvrow = &mut dv.row_mut(j)[lo..hi];
                        for (dvv, &dc) in dvrow.iter_mut().zip(dctx_row) {
                            *dvv += w * dc;
                        }
                    }
                }
                // softmax backward on row i
                let s: f64 = (0..seq).map(|j| d_w[j] * weights[(i, j)]).sum();
                for j in 0..seq {
                    let w = weights[(i, j)];
                    if w == 0.0 {
                        continue;
                    }
                    let d_score = w * (d_w[j] - s) * scale;
                    let krow = &lc.k.row(j)[lo..hi];
                    let qrow = &lc.q.row(i)[lo..hi];
                    let dqrow = &mut dq.row_mut(i)[lo..hi];
                    for (dqq, &kk) in dqrow.iter_mut().zip(krow) {
                        *dqq += d_score * kk;
                    }
                    let dkrow = &mut dk.row_mut(j)[lo..hi];
                    for (dkk, &qq) in dkrow.iter_mut().zip(qrow) {
                        *dkk += d_score * qq;
                    }
                }
            }
        }

        lg.wq.add_assign(&lc.x_in.matmul_at(&dq));
        lg.bq.add_assign(&dq.col_sums());
        lg.wk.add_assign(&lc.x_in.matmul_at(&dk));
        lg.bk.add_assign(&dk.col_sums());
        lg.wv.add_assign(&lc.x_in.matmul_at(&dv));
        lg.bv.add_assign(&dv.col_sums());
        d_x_in.add_assign(&dq.matmul_bt(&lp.wq));
        d_x_in.add_assign(&dk.matmul_bt(&lp.wk));
        d_x_in.add_assign(&dv.matmul_bt(&lp.wv));

        dx = d_x_in;
    }

    // --- embedding scatter ---
    if let Some(m) = &cache.emb_drop {
        apply_mask(&mut dx, m);
    }
    for (t, &tok) in cache.tokens.iter().enumerate() {
        let src = dx.row(t);
        let dst = grads.embedding.row_mut(tok);
        for (g, &v) in dst.iter_mut().zip(src) {
            *g += v;
        }
    }
}

/// Reverse zip over (params, caches, grads) layer triples.
fn itertools_rev<'a>(
    params: &'a [LayerParams],
    caches: &'a [LayerCache],
    grads: &'a mut [LayerParams],
) -> impl Iterator<Item = (&'a LayerParams, &'a LayerCache, &'a mut LayerParams)> {
    params
        .iter()
        .rev()
        .zip(caches.iter().rev())
        .zip(grads.iter_mut().rev())
        .map(|((p, c), g)| (p, c, g))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samples::{CLS_ID, SEP_ID};

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            num_layers: 1,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            mlp_hidden: 8,
            vocab_size: 10,
            l_ext: 2,
            l_int: 2,
            dropout: 0.0,
            seed: 7,
        }
    }

    /// [CLS] o o [SEP] a a with ids drawn from the tiny vocab.
    fn tiny_tokens() -> Vec<usize> {
        vec![CLS_ID, 3, 4, SEP_ID, 7, 8]
    }

    #[test]
    fn config_validation() {
        assert!(tiny_cfg().validate().is_ok());
        let mut bad = tiny_cfg();
        bad.model_dim = 9;
        assert!(bad.validate().is_err());
        bad = tiny_cfg();
        bad.dropout = 1.0;
        assert!(bad.validate().is_err());
        bad = tiny_cfg();
        bad.num_layers = 0;
        assert!(bad.validate().is_err());
        assert_eq!(tiny_cfg().max_seq_len(), 6);
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let cfg = tiny_cfg();
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.seed = 8;
        assert_ne!(a, ModelParams::init(&other).unwrap());

        assert_eq!(a.embedding.rows(), cfg.vocab_size);
        assert_eq!(a.layers.len(), 1);
        assert!(a.layers[0].ln1_scale.data().iter().all(|&v| v == 1.0));
        assert!(a.layers[0].bq.data().iter().all(|&v| v == 0.0));
        assert!(a.all_finite());
        // visit covers every tensor exactly once, names unique
        let names: Vec<String> = a.visit().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names.len(), 1 + 16 + 4);
    }

    #[test]
    fn embedding_is_position_free() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let e = embed(&params, &[CLS_ID, 3, 3]).unwrap();
        assert_eq!(e.rows(), 3);
        assert_eq!(e.row(1), e.row(2));
        let swapped = embed(&params, &[3, CLS_ID, 3]).unwrap();
        assert_eq!(e.row(0), swapped.row(1));
        assert_eq!(e.row(1), swapped.row(0));
        assert!(matches!(
            embed(&params, &[99]),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_model_scores_one_half() {
        let cfg = tiny_cfg();
        let params = ModelParams::zeros_like(&cfg);
        let cache = forward_cached(&params, &cfg, &tiny_tokens(), None).unwrap();
        assert_eq!(cache.logit, 0.0);
        assert_eq!(sigmoid(cache.logit), 0.5);
        assert_eq!(classify(&params, &vec![0.3; cfg.model_dim]), 0.5);
    }

    #[test]
    fn classifier_is_monotone_and_bounded() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let p = classify(&params, &vec![0.5; cfg.model_dim]);
        assert!(p > 0.0 && p < 1.0);
        assert!(sigmoid(3.0) > sigmoid(2.0));
        assert!(sigmoid(-30.0) > 0.0);
        assert!(sigmoid(30.0) < 1.0);
    }

    #[test]
    fn bce_matches_reference_values() {
        // -ln σ(z) for the positive class
        assert!((bce_with_logits(0.0, true) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_with_logits(0.0, false) - std::f64::consts::LN_2).abs() < 1e-15);
        let z = 2.0;
        let p = sigmoid(z);
        assert!((bce_with_logits(z, true) + p.ln()).abs() < 1e-12);
        assert!((bce_with_logits(z, false) + (1.0 - p).ln()).abs() < 1e-12);
        // saturated logits stay finite
        assert!(bce_with_logits(500.0, false).is_finite());
        assert!(bce_with_logits(-500.0, true).is_finite());
    }

    #[test]
    fn attention_rows_sum_to_one_over_live_keys() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tokens = vec![CLS_ID, 3, PAD_ID, SEP_ID, 7, PAD_ID];
        let cache = forward_cached(&params, &cfg, &tokens, None).unwrap();
        for h in 0..cfg.num_heads {
            let w = &cache.attention(0)[h];
            for i in 0..tokens.len() {
                let total: f64 = (0..tokens.len()).map(|j| w[(i, j)]).sum();
                assert!((total - 1.0).abs() < 1e-12);
                // masked keys carry exactly zero weight
                assert_eq!(w[(i, 2)], 0.0);
                assert_eq!(w[(i, 5)], 0.0);
            }
        }
    }

    #[test]
    fn permuting_non_cls_positions_preserves_the_logit() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tokens = tiny_tokens();
        let base = forward_logit(&params, &cfg, &tokens).unwrap();
        // a few hand permutations of positions 1..6 (tokens travel with
        // their mask state; here nothing is padded)
        let perms: Vec<Vec<usize>> = vec![
            vec![0, 2, 1, 3, 4, 5],
            vec![0, 5, 4, 3, 2, 1],
            vec![0, 4, 1, 5, 2, 3],
        ];
        for perm in perms {
            let shuffled: Vec<usize> = perm.iter().map(|&p| tokens[p]).collect();
            let logit = forward_logit(&params, &cfg, &shuffled).unwrap();
            assert!(
                (logit - base).abs() <= 1e-5,
                "permutation moved the logit by {}",
                (logit - base).abs()
            );
        }
    }

    #[test]
    fn permutation_also_preserves_hidden_cls_row() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tokens = vec![CLS_ID, 3, 4, SEP_ID, 7, PAD_ID];
        let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();
        let base =
            encoder_forward(&params, &cfg, &embed(&params, &tokens).unwrap(), &mask).unwrap();

        let perm = [0usize, 5, 3, 1, 4, 2];
        let shuffled: Vec<usize> = perm.iter().map(|&p| tokens[p]).collect();
        let smask: Vec<bool> = perm.iter().map(|&p| mask[p]).collect();
        let moved =
            encoder_forward(&params, &cfg, &embed(&params, &shuffled).unwrap(), &smask).unwrap();
        for (a, b) in base.row(0).iter().zip(moved.row(0)) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn trailing_pads_do_not_move_the_logit() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tokens = vec![CLS_ID, 3, SEP_ID, 7];
        let base = forward_logit(&params, &cfg, &tokens).unwrap();
        for extra in 1..=8 {
            let mut padded = tokens.clone();
            padded.extend(std::iter::repeat_n(PAD_ID, extra));
            let logit = forward_logit(&params, &cfg, &padded).unwrap();
            assert!(
                (logit - base).abs() <= 1e-6,
                "{extra} pads moved the logit by {}",
                (logit - base).abs()
            );
        }
    }

    #[test]
    fn dropout_zero_forward_is_pure() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let a = forward_logit(&params, &cfg, &tiny_tokens()).unwrap();
        let b = forward_logit(&params, &cfg, &tiny_tokens()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_mode_dropout_perturbs_and_is_seeded() {
        let mut cfg = tiny_cfg();
        cfg.dropout = 0.5;
        let params = ModelParams::init(&cfg).unwrap();
        let mut r1 = stream_rng(1, Stream::Dropout);
        let mut r2 = stream_rng(1, Stream::Dropout);
        let mut r3 = stream_rng(2, Stream::Dropout);
        let a = forward_cached(&params, &cfg, &tiny_tokens(), Some(&mut r1))
            .unwrap()
            .logit;
        let b = forward_cached(&params, &cfg, &tiny_tokens(), Some(&mut r2))
            .unwrap()
            .logit;
        let c = forward_cached(&params, &cfg, &tiny_tokens(), Some(&mut r3))
            .unwrap()
            .logit;
        assert_eq!(a, b);
        assert_ne!(a, c);
        let eval = forward_logit(&params, &cfg, &tiny_tokens()).unwrap();
        assert_ne!(a, eval);
    }

    #[test]
    fn pad_embedding_rows_receive_zero_gradient() {
        let cfg = tiny_cfg();
        let params = ModelParams::init(&cfg).unwrap();
        let tokens = vec![CLS_ID, 3, PAD_ID, SEP_ID, 7, PAD_ID];
        let cache = forward_cached(&params, &cfg, &tokens, None).unwrap();
        let mut grads = ModelParams::zeros_like(&cfg);
        backward(&params, &cfg, &cache, 1.0, &mut grads);
        assert!(grads.embedding.row(PAD_ID).iter().all(|&g| g == 0.0));
        assert!(grads.embedding.row(3).iter().any(|&g| g != 0.0));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let cfg = tiny_cfg();
        let mut params = ModelParams::init(&cfg).unwrap();
        let batch: Vec<(Vec<usize>, bool)> = vec![
            (vec![CLS_ID, 3, 4, SEP_ID, 7, 8], true),
            (vec![CLS_ID, 5, PAD_ID, SEP_ID, 8, PAD_ID], false),
            (vec![CLS_ID, 6, 4, SEP_ID, 9, PAD_ID], true),
        ];

        let loss = |p: &ModelParams| -> f64 {
            batch
                .iter()
                .map(|(t, y)| {
                    bce_with_logits(forward_logit(p, &cfg, t).unwrap(), *y)
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let mut grads = ModelParams::zeros_like(&cfg);
        for (t, y) in &batch {
            let cache = forward_cached(&params, &cfg, t, None).unwrap();
            let d_logit = (sigmoid(cache.logit) - *y as u8 as f64) / batch.len() as f64;
            backward(&params, &cfg, &cache, d_logit, &mut grads);
        }

        let h = 1e-4;
        let mut checked = 0usize;
        let mut ok = 0usize;
        let names: Vec<String> = params.visit().iter().map(|(n, _)| n.clone()).collect();
        for (tensor_idx, name) in names.iter().enumerate() {
            let len = params.visit()[tensor_idx].1.data().len();
            for slot in 0..len {
                let original = params.visit()[tensor_idx].1.data()[slot];
                params.visit_mut()[tensor_idx].1.data_mut()[slot] = original + h;
                let up = loss(&params);
                params.visit_mut()[tensor_idx].1.data_mut()[slot] = original - h;
                let down = loss(&params);
                params.visit_mut()[tensor_idx].1.data_mut()[slot] = original;

                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.visit()[tensor_idx].1.data()[slot];
                let rel = (analytic - numeric).abs()
                    / analytic.abs().max(numeric.abs()).max(1e-8);
                checked += 1;
                if rel <= 1e-3 {
                    ok += 1;
                } else if checked - ok > 20 {
                    panic!("gradient mismatch piling up at {name}[{slot}]: rel {rel}");
                }
            }
        }
        let frac = ok as f64 / checked as f64;
        assert!(
            frac >= 0.99,
            "only {:.2}% of {checked} parameter gradients within tolerance",
            frac * 100.0
        );
    }
}
