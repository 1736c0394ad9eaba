//! Versioned model checkpoint: a JSON header (config, vocabulary, tensor
//! manifest) followed by the named tensors as row-major little-endian f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderConfig, ModelParams};
use crate::samples::Vocabulary;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"BILINKCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabHeader {
    objects: Vec<String>,
    attributes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab: VocabHeader,
    manifest: Vec<TensorMeta>,
}

/// Serialize a trained model. Weights are truncated to f32; everything else
/// is exact, and the byte stream is identical across reruns.
pub fn save_checkpoint(
    path: &Path,
    cfg: &EncoderConfig,
    vocab: &Vocabulary,
    params: &ModelParams,
) -> Result<()> {
    let tensors = params.visit();
    let header = Header {
        config: cfg.clone(),
        vocab: VocabHeader {
            objects: vocab.object_id_list().to_vec(),
            attributes: vocab.attribute_id_list().to_vec(),
        },
        manifest: tensors
            .iter()
            .map(|(name, m)| TensorMeta {
                name: name.clone(),
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json(path.display().to_string(), e))?;

    let payload: usize = tensors.iter().map(|(_, m)| m.data().len() * 4).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, m) in &tensors {
        for &v in m.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a checkpoint back; shapes and names are validated against the
/// config before any tensor data is trusted.
pub fn load_checkpoint(path: &Path) -> Result<(EncoderConfig, Vocabulary, ModelParams)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let bad = |msg: String| Err(Error::BadCheckpoint(msg));

    if bytes.len() < MAGIC.len() + 12 {
        return bad("file shorter than the fixed header".to_string());
    }
    if &bytes[..8] != MAGIC {
        return bad("magic bytes missing; not a checkpoint".to_string());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("fixed width"));
    if version != VERSION {
        return bad(format!("unsupported version {version} (expected {VERSION})"));
    }
    let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("fixed width")) as usize;
    let json_end = 20usize
        .checked_add(json_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::BadCheckpoint("header length exceeds file size".to_string()))?;
    let header: Header = serde_json::from_slice(&bytes[20..json_end])
        .map_err(|e| Error::json(path.display().to_string(), e))?;

    header.config.validate()?;
    let vocab = Vocabulary::from_ids(header.vocab.objects, header.vocab.attributes)?;
    if vocab.size() != header.config.vocab_size {
        return bad(format!(
            "vocabulary holds {} tokens but the config says {}",
            vocab.size(),
            header.config.vocab_size
        ));
    }

    let mut params = ModelParams::zeros_like(&header.config);
    let mut offset = json_end;
    {
        let expected = params.visit_mut();
        if header.manifest.len() != expected.len() {
            return bad(format!(
                "manifest lists {} tensors, model needs {}",
                header.manifest.len(),
                expected.len()
            ));
        }
        for (meta, (name, tensor)) in header.manifest.iter().zip(expected) {
            if meta.name != name || meta.rows != tensor.rows() || meta.cols != tensor.cols() {
                return bad(format!(
                    "tensor '{}' ({}×{}) does not match expected '{}' ({}×{})",
                    meta.name,
                    meta.rows,
                    meta.cols,
                    name,
                    tensor.rows(),
                    tensor.cols()
                ));
            }
            let n_bytes = meta.rows * meta.cols * 4;
            if offset + n_bytes > bytes.len() {
                return bad(format!("tensor '{}' runs past the end of the file", meta.name));
            }
            for (slot, chunk) in tensor
                .data_mut()
                .iter_mut()
                .zip(bytes[offset..offset + n_bytes].chunks_exact(4))
            {
                *slot = f32::from_le_bytes(chunk.try_into().expect("fixed width")) as f64;
            }
            offset += n_bytes;
        }
    }
    if offset != bytes.len() {
        return bad(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - offset
        ));
    }
    if !params.all_finite() {
        return bad("non-finite weights".to_string());
    }
    Ok((header.config, vocab, params))
}

// ---------------------------------------------------------------------------
