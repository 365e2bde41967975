//! Binary checkpoints: the magic `NEAFCKPT`, a little-endian `u64` header
//! length, a JSON header naming every tensor, then the tensor data as
//! little-endian `f64`s in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_params, ModelError, ModelParams, ModelSpec};
use crate::tensor::{Param, Tensor};

const MAGIC: &[u8; 8] = b"NEAFCKPT";
const FORMAT_VERSION: u32 = 1;
const RFF_TENSOR: &str = "encoding.rff_frequencies";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the data section.
    offset: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelSpec,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(spec: &ModelSpec, params: &ModelParams) -> Result<Vec<u8>, ModelError> {
    check_params(spec, params)?;
    let mut tensors = Vec::new();
    let mut data: Vec<f64> = Vec::with_capacity(params.total_len());
    for p in &params.params {
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset: data.len(),
            trainable: true,
        });
        data.extend_from_slice(p.value.data());
    }
    if let Some(b) = &params.rff_frequencies {
        tensors.push(TensorEntry {
            name: RFF_TENSOR.to_string(),
            shape: vec![b.len()],
            offset: data.len(),
            trainable: false,
        });
        data.extend_from_slice(b);
    }
    let header = serde_json::to_vec(&Header {
        format_version: FORMAT_VERSION,
        model: spec.clone(),
        tensors,
    })
    .map_err(|e| ModelError::Checkpoint(e.to_string()))?;

    let mut out = Vec::with_capacity(16 + header.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelSpec, ModelParams), ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let data_start = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..data_start]).map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let body = &bytes[data_start..];
    if body.len() % 8 != 0 {
        return Err(bad("data section is not a whole number of f64 values"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let mut params = Vec::new();
    let mut rff = None;
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        let slice = t
            .offset
            .checked_add(n)
            .and_then(|end| values.get(t.offset..end))
            .ok_or_else(|| ModelError::Checkpoint(format!("tensor `{}` runs past the data section", t.name)))?;
        if !t.trainable && t.name == RFF_TENSOR {
            rff = Some(slice.to_vec());
        } else if t.trainable {
            let value = Tensor::new(t.shape, slice.to_vec())?;
            params.push(Param::new(t.name, value));
        } else {
            return Err(ModelError::Checkpoint(format!("unknown frozen tensor `{}`", t.name)));
        }
    }
    let params = ModelParams {
        params,
        rff_frequencies: rff,
    };
    check_params(&header.model, &params)?;
    Ok((header.model, params))
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &ModelSpec, params: &ModelParams) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(spec, params)?).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelSpec, ModelParams), ModelError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
