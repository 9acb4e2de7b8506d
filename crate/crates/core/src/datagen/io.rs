//! `NDNN-DS1` dataset files: magic `NDNNDS1\0`, `u32` LE header length, JSON
//! header, then per utterance noisy `f32`, clean `f32`, cd `u16`, mono `u16`,
//! all little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Normalization, Utterance};
use crate::error::{format_err, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"NDNNDS1\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    feat_dim: usize,
    states_per_phone: usize,
    n_mono: usize,
    n_cd: usize,
    utterances: usize,
    frames: Vec<usize>,
    normalization: Option<Normalization>,
    meta: serde_json::Value,
}

pub fn dataset_to_bytes(ds: &Dataset) -> Vec<u8> {
    let header = Header {
        feat_dim: ds.feat_dim,
        states_per_phone: ds.states_per_phone,
        n_mono: ds.n_mono,
        n_cd: ds.n_cd(),
        utterances: ds.utterances.len(),
        frames: ds.utterances.iter().map(Utterance::frames).collect(),
        normalization: ds.normalization.clone(),
        meta: ds.meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("dataset header serializes");
    let frames = ds.total_frames();
    let mut out = Vec::with_capacity(12 + json.len() + frames * (8 * ds.feat_dim + 4));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for u in &ds.utterances {
        u.noisy.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        u.clean.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        u.cd.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        u.mono.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        match self.bytes.get(self.pos..self.pos + n) {
            Some(s) => {
                self.pos += n;
                Ok(s)
            }
            None => format_err("dataset payload is truncated"),
        }
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(4 * n)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn u16s(&mut self, n: usize) -> Result<Vec<u16>> {
        Ok(self.take(2 * n)?.chunks_exact(2).map(|c| u16::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return format_err("not an NDNN-DS1 dataset (bad magic)");
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let Some(json) = bytes.get(12..12 + hlen) else {
        return format_err("truncated dataset header");
    };
    let h: Header =
        serde_json::from_slice(json).map_err(|e| crate::Error::Format(format!("bad dataset header: {e}")))?;
    if h.frames.len() != h.utterances || h.n_cd != h.n_mono * h.states_per_phone {
        return format_err("dataset header is inconsistent");
    }
    let mut r = Reader { bytes, pos: 12 + hlen };
    let d = h.feat_dim;
    let mut utterances = Vec::with_capacity(h.utterances);
    for &t in &h.frames {
        utterances.push(Utterance { noisy: r.f32s(t * d)?, clean: r.f32s(t * d)?, cd: r.u16s(t)?, mono: r.u16s(t)? });
    }
    if r.pos != bytes.len() {
        return format_err("trailing bytes after dataset payload");
    }
    let ds = Dataset {
        feat_dim: d,
        states_per_phone: h.states_per_phone,
        n_mono: h.n_mono,
        utterances,
        normalization: h.normalization,
        meta: h.meta,
    };
    ds.validate().map_err(|e| crate::Error::Format(e.to_string()))?;
    Ok(ds)
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
