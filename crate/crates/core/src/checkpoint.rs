//! Multi-network checkpoint files.
//!
//! Layout: magic `NDNNCKP1`, a little-endian `u32` header length, a JSON
//! header `{system, meta, entries: [{name, offset, len}]}`, then the `.ndnn`
//! blob of every network back to back. Offsets are byte offsets into the
//! blob area.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{format_err, Result};
use crate::mlp::{mlp_from_bytes, mlp_to_bytes, MlpParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"NDNNCKP1";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    system: String,
    meta: serde_json::Value,
    entries: Vec<Entry>,
}

/// A named set of networks plus system-specific metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub system: String,
    pub meta: serde_json::Value,
    pub networks: Vec<(String, MlpParams)>,
}

impl Checkpoint {
    pub fn network(&self, name: &str) -> Result<&MlpParams> {
        match self.networks.iter().find(|(n, _)| n == name) {
            Some((_, p)) => Ok(p),
            None => format_err(format!("checkpoint of '{}' has no network '{name}'", self.system)),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let blobs: Vec<Vec<u8>> = self.networks.iter().map(|(_, p)| mlp_to_bytes(p)).collect();
        let mut offset = 0;
        let entries = self
            .networks
            .iter()
            .zip(&blobs)
            .map(|((name, _), b)| {
                let e = Entry { name: name.clone(), offset, len: b.len() };
                offset += b.len();
                e
            })
            .collect();
        let header = Header { system: self.system.clone(), meta: self.meta.clone(), entries };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for b in blobs {
            out.extend_from_slice(&b);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return format_err("not a checkpoint file (bad magic)");
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let Some(json) = bytes.get(12..12 + hlen) else {
            return format_err("truncated checkpoint header");
        };
        let header: Header =
            serde_json::from_slice(json).map_err(|e| crate::Error::Format(format!("bad checkpoint header: {e}")))?;
        let body = &bytes[12 + hlen..];
        let mut networks = Vec::with_capacity(header.entries.len());
        let mut expected = 0;
        for e in &header.entries {
            if e.offset != expected || e.offset + e.len > body.len() {
                return format_err(format!("checkpoint entry '{}' lies outside the file", e.name));
            }
            networks.push((e.name.clone(), mlp_from_bytes(&body[e.offset..e.offset + e.len])?));
            expected += e.len;
        }
        if expected != body.len() {
            return format_err("trailing bytes after the last checkpoint entry");
        }
        Ok(Checkpoint { system: header.system, meta: header.meta, networks })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
