//! Training loop: adaptive-moment updates over mean-BCE batches, seeded
//! epoch shuffling, and per-sample dropout streams that do not depend on
//! batch composition or epoch order.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::model::{
    backward, bce_with_logits, forward_cached, sigmoid, EncoderConfig, ModelParams,
};
use crate::rng::{mix, stream_rng, Stream};
use crate::{Error, Result};

/// One tokenized training sample.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub tokens: Vec<usize>,
    pub label: bool,
}

/// Optimizer and schedule settings.
#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled L2 shrinkage applied with the update (0 disables it).
    /// Useful on sparse graphs where a handful of rare pairs would
    /// otherwise be memorized outright.
    pub weight_decay: f64,
    /// 1 trains sequentially and bit-deterministically; more enables the
    /// shared thread pool for the in-batch fold.
    pub threads: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 24,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            threads: 1,
        }
    }
}

/// What happened during training.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epoch_losses.len()
    }
}

/// Dropout generator for one (epoch, sample) cell; independent of shuffling
/// and batch boundaries so reorderings cannot leak into the masks.
fn sample_dropout_rng(seed: u64, epoch: usize, sample_idx: usize) -> rand_chacha::ChaCha8Rng {
    let cell = ((epoch as u64) << 32) ^ sample_idx as u64;
    stream_rng(mix(seed ^ mix(cell)), Stream::Dropout)
}

/// Loss and gradient contribution of one sample; the gradient is scaled so
/// that summing over the batch yields the batch-mean gradient.
fn accumulate_sample(
    params: &ModelParams,
    cfg: &EncoderConfig,
    sample: &TrainSample,
    epoch: usize,
    sample_idx: usize,
    inv_batch: f64,
    grads: &mut ModelParams,
) -> Result<f64> {
    let cache = if cfg.dropout > 0.0 {
        let mut rng = sample_dropout_rng(cfg.seed, epoch, sample_idx);
        forward_cached(params, cfg, &sample.tokens, Some(&mut rng))?
    } else {
        forward_cached(params, cfg, &sample.tokens, None)?
    };
    let loss = bce_with_logits(cache.logit, sample.label);
    if !loss.is_finite() {
        return Err(Error::Training(format!(
            "non-finite loss at epoch {epoch}, sample {sample_idx}"
        )));
    }
    let d_logit = (sigmoid(cache.logit) - sample.label as u8 as f64) * inv_batch;
    backward(params, cfg, &cache, d_logit, grads);
    Ok(loss)
}

/// Train a freshly initialized model on the sample set.
///
/// Every stochastic choice (init, shuffling, dropout) flows from
/// `cfg.seed`, so a rerun with the same inputs reproduces the same model —
/// bit-exactly when `opts.threads == 1`.
pub fn train(
    samples: &[TrainSample],
    cfg: &EncoderConfig,
    opts: &TrainOptions,
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Training("no training samples".to_string()));
    }
    let seq = samples[0].tokens.len();
    if let Some(odd) = samples.iter().position(|s| s.tokens.len() != seq) {
        return Err(Error::Training(format!(
            "sample {odd} has length {} but the set uses {seq}",
            samples[odd].tokens.len()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Training("batch size must be at least 1".to_string()));
    }
    if !(opts.lr.is_finite() && opts.lr > 0.0) {
        return Err(Error::Training(format!("learning rate {} unusable", opts.lr)));
    }
    if !(opts.weight_decay.is_finite() && opts.weight_decay >= 0.0) {
        return Err(Error::Training(format!(
            "weight decay {} unusable",
            opts.weight_decay
        )));
    }

    let started = Instant::now();
    let mut params = ModelParams::init(cfg)?;
    let mut m_state = ModelParams::zeros_like(cfg);
    let mut v_state = ModelParams::zeros_like(cfg);
    let mut step = 0i32;
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);

    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    let mut epoch_seconds = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let epoch_start = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        for batch in order.chunks(opts.batch_size) {
            let inv_batch = 1.0 / batch.len() as f64;
            let (grads, batch_loss) = if opts.threads > 1 {
                batch
                    .par_iter()
                    .map(|&idx| {
                        let mut g = ModelParams::zeros_like(cfg);
                        let loss = accumulate_sample(
                            &params, cfg, &samples[idx], epoch, idx, inv_batch, &mut g,
                        )?;
                        Ok((g, loss))
                    })
                    .reduce(
                        || Ok((ModelParams::zeros_like(cfg), 0.0)),
                        |a: Result<_>, b: Result<_>| {
                            let (mut ga, la) = a?;
                            let (gb, lb) = b?;
                            ga.add_scaled(&gb, 1.0);
                            Ok((ga, la + lb))
                        },
                    )?
            } else {
                let mut g = ModelParams::zeros_like(cfg);
                let mut total = 0.0;
                for &idx in batch {
                    total +=
                        accumulate_sample(&params, cfg, &samples[idx], epoch, idx, inv_batch, &mut g)?;
                }
                (g, total)
            };
            loss_sum += batch_loss;

            step += 1;
            adam_step(&mut params, &grads, &mut m_state, &mut v_state, step, opts);
        }

        if !params.all_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        epoch_losses.push(loss_sum / samples.len() as f64);
        epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }

    let report = TrainReport {
        epoch_losses,
        epoch_seconds,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((params, report))
}

fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    m_state: &mut ModelParams,
    v_state: &mut ModelParams,
    step: i32,
    opts: &TrainOptions,
) {
    let bc1 = 1.0 - opts.beta1.powi(step);
    let bc2 = 1.0 - opts.beta2.powi(step);
    let grads_v = grads.visit();
    let mut ms = m_state.visit_mut();
    let mut vs = v_state.visit_mut();
    for (t, (_, p)) in params.visit_mut().into_iter().enumerate() {
        let g = grads_v[t].1.data();
        let m = ms[t].1.data_mut();
        let v = vs[t].1.data_mut();
        for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *m = opts.beta1 * *m + (1.0 - opts.beta1) * g;
            *v = opts.beta2 * *v + (1.0 - opts.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= opts.lr * (m_hat / (v_hat.sqrt() + opts.eps) + opts.weight_decay * *p);
        }
    }
}

// ---------------------------------------------------------------------------
