//! Set-pair classifier: embedding + masked self-attention stack + MLP head,
//! with training, checkpointing, and link scoring.
//!
//! The model consumes an unordered pair of member sets — objects on one
//! side, attributes on the other — rendered as `[CLS] x… [SEP] y…` with
//! right padding. It carries no positional table, so member order and pad
//! count cannot influence a score; see the invariance tests in `model`.

mod checkpoint;
mod matrix;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use matrix::Matrix;
pub use model::{
    backward, bce_with_logits, classify, embed, encoder_forward, forward_cached, forward_logit,
    sigmoid, EncoderConfig, ForwardCache, LayerParams, ModelParams,
};
pub use train::{train, TrainOptions, TrainReport, TrainSample};

use crate::samples::{tokenize, Kind, PaddedSample, Vocabulary};
use crate::{Error, Result};

/// Probability that the given object set and attribute set form a fully
/// connected pair. Members are identifiers resolved against the model's
/// vocabulary; listing order is irrelevant.
pub fn predict(
    params: &ModelParams,
    cfg: &EncoderConfig,
    vocab: &Vocabulary,
    objects: &[&str],
    attributes: &[&str],
) -> Result<f64> {
    if objects.len() > cfg.l_ext {
        return Err(Error::SetTooLarge {
            side: "object",
            size: objects.len(),
            limit: cfg.l_ext,
        });
    }
    if attributes.len() > cfg.l_int {
        return Err(Error::SetTooLarge {
            side: "attribute",
            size: attributes.len(),
            limit: cfg.l_int,
        });
    }
    let mut obj_idx = objects
        .iter()
        .map(|id| vocab.object_index(id))
        .collect::<Result<Vec<_>>>()?;
    let mut attr_idx = attributes
        .iter()
        .map(|id| vocab.attribute_index(id))
        .collect::<Result<Vec<_>>>()?;
    obj_idx.sort_unstable();
    obj_idx.dedup();
    attr_idx.sort_unstable();
    attr_idx.dedup();

    let pad = |members: Vec<usize>, width: usize| {
        let mut seq: Vec<Option<usize>> = members.into_iter().map(Some).collect();
        seq.resize(width, None);
        seq
    };
    let sample = PaddedSample {
        objects: pad(obj_idx, cfg.l_ext),
        attributes: pad(attr_idx, cfg.l_int),
        label: false,
        kind: Kind::Context,
    };
    let tokens = tokenize(&sample, vocab)?;
    Ok(sigmoid(forward_logit(params, cfg, &tokens)?))
}
