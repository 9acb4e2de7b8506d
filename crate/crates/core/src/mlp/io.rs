//! `.ndnn` parameter blobs: 8-byte magic, a little-endian `u32` header
//! length, a JSON header (spec plus tensor offset table), then every tensor as
//! little-endian `f64` in layer order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HiddenLayer, MlpParams, MlpSpec};
use crate::error::{format_err, Result};
use crate::layers::{BatchNormParams, DenseParams, BN_EPS, BN_MOMENTUM};
use crate::numeric::Matrix;

pub const MLP_MAGIC: &[u8; 8] = b"NDNNMLP1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Offset in `f64` elements from the start of the payload.
    offset: usize,
    len: usize,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: MlpSpec,
    version: u64,
    bn_momentum: f64,
    bn_eps: f64,
    tensors: Vec<TensorEntry>,
}

fn collect(params: &MlpParams) -> Vec<(String, [usize; 2], Vec<f64>)> {
    let mut out = Vec::new();
    for (i, l) in params.hidden.iter().enumerate() {
        let w = &l.dense.weight;
        out.push((format!("hidden{i}.weight"), [w.rows(), w.cols()], w.data().to_vec()));
        out.push((format!("hidden{i}.bias"), [1, l.dense.bias.len()], l.dense.bias.clone()));
        if let Some(bn) = &l.bn {
            let d = bn.dim();
            out.push((format!("hidden{i}.gamma"), [1, d], bn.gamma.clone()));
            out.push((format!("hidden{i}.beta"), [1, d], bn.beta.clone()));
            out.push((format!("hidden{i}.running_mean"), [1, d], bn.running_mean.clone()));
            out.push((format!("hidden{i}.running_var"), [1, d], bn.running_var.clone()));
        }
    }
    for (h, spec) in params.heads.iter().zip(&params.spec.heads) {
        out.push((format!("{}.weight", spec.name), [h.weight.rows(), h.weight.cols()], h.weight.data().to_vec()));
        out.push((format!("{}.bias", spec.name), [1, h.bias.len()], h.bias.clone()));
    }
    out
}

pub fn mlp_to_bytes(params: &MlpParams) -> Vec<u8> {
    let tensors = collect(params);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, shape, data) in &tensors {
        entries.push(TensorEntry { name: name.clone(), offset, len: data.len(), shape: *shape });
        offset += data.len();
    }
    let bn = params.hidden.iter().find_map(|l| l.bn.as_ref());
    let header = Header {
        spec: params.spec.clone(),
        version: params.version,
        bn_momentum: bn.map_or(BN_MOMENTUM, |b| b.momentum),
        bn_eps: bn.map_or(BN_EPS, |b| b.eps),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 8 * offset);
    out.extend_from_slice(MLP_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, data) in &tensors {
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn mlp_from_bytes(bytes: &[u8]) -> Result<MlpParams> {
    if bytes.len() < 12 || &bytes[..8] != MLP_MAGIC {
        return format_err("not an .ndnn parameter blob (bad magic)");
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let Some(json) = bytes.get(12..12 + hlen) else {
        return format_err("truncated .ndnn header");
    };
    let header: Header =
        serde_json::from_slice(json).map_err(|e| crate::Error::Format(format!("bad .ndnn header: {e}")))?;
    header.spec.validate().map_err(|e| crate::Error::Format(e.to_string()))?;
    let payload = &bytes[12 + hlen..];
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != 8 * total {
        return format_err(format!("payload holds {} bytes, header describes {}", payload.len(), 8 * total));
    }
    let mut it = header.tensors.iter();
    let mut next = |expect: [usize; 2]| -> Result<Vec<f64>> {
        let Some(t) = it.next() else {
            return format_err("missing tensor in .ndnn blob");
        };
        if t.shape != expect || t.len != expect[0] * expect[1] || t.offset + t.len > total {
            return format_err(format!("tensor '{}' has shape {:?}, expected {:?}", t.name, t.shape, expect));
        }
        Ok(payload[8 * t.offset..8 * (t.offset + t.len)]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let spec = header.spec.clone();
    let mut hidden = Vec::new();
    let mut prev = spec.input_dim;
    for &h in &spec.hidden_dims {
        let weight = Matrix::from_vec(h, prev, next([h, prev])?)?;
        let bias = next([1, h])?;
        let bn = if spec.use_batchnorm {
            Some(BatchNormParams {
                gamma: next([1, h])?,
                beta: next([1, h])?,
                running_mean: next([1, h])?,
                running_var: next([1, h])?,
                momentum: header.bn_momentum,
                eps: header.bn_eps,
            })
        } else {
            None
        };
        hidden.push(HiddenLayer { dense: DenseParams { weight, bias }, bn });
        prev = h;
    }
    let mut heads = Vec::new();
    for hs in &spec.heads {
        let weight = Matrix::from_vec(hs.dim, prev, next([hs.dim, prev])?)?;
        heads.push(DenseParams { weight, bias: next([1, hs.dim])? });
    }
    if it.next().is_some() {
        return format_err("unexpected extra tensors in .ndnn blob");
    }
    Ok(MlpParams { spec, hidden, heads, version: header.version })
}

pub fn write_mlp(path: &Path, params: &MlpParams) -> Result<()> {
    std::fs::write(path, mlp_to_bytes(params))?;
    Ok(())
}

pub fn read_mlp(path: &Path) -> Result<MlpParams> {
    mlp_from_bytes(&std::fs::read(path)?)
}
