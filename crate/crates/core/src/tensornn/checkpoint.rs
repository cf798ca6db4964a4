//! Self-describing checkpoint container.
//!
//! Layout: the magic line `ELLAV-CKPT v1`, one line of JSON header (model
//! config, vocab, parameter layout, dtype, step and free-form metadata), then
//! the flat parameter buffer as little-endian floats. Values round-trip
//! bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamLayout, Params};
use super::transformer::ModelConfig;
use super::Scalar;
use crate::error::{Error, Result};
use crate::seqbuild::Vocab;
use crate::util::write_atomic;

const MAGIC: &[u8] = b"ELLAV-CKPT v1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `"gar"` or `"nar"`.
    pub kind: String,
    pub dtype: String,
    pub model: ModelConfig,
    pub vocab: Vocab,
    pub table_rows: Vec<usize>,
    pub head_sizes: Vec<usize>,
    pub layout: ParamLayout,
    /// Optimizer updates applied.
    pub step: u64,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub header: CheckpointHeader,
    pub params: Params<F>,
}

pub fn write_checkpoint<F: Scalar>(ckpt: &Checkpoint<F>) -> Result<Vec<u8>> {
    if ckpt.header.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "header dtype {} does not match buffer type {}",
            ckpt.header.dtype,
            F::DTYPE
        )));
    }
    if ckpt.params.data.len() != ckpt.header.layout.total {
        return Err(Error::Checkpoint("parameter buffer does not match layout".into()));
    }
    let header = serde_json::to_string(&ckpt.header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(MAGIC.len() + header.len() + 1 + ckpt.params.data.len() * F::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(header.as_bytes());
    out.push(b'\n');
    for &x in &ckpt.params.data {
        x.write_le(&mut out);
    }
    Ok(out)
}

pub fn read_checkpoint<F: Scalar>(bytes: &[u8]) -> Result<Checkpoint<F>> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Checkpoint("not a checkpoint (bad magic)".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..nl]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    if header.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} but {} was requested",
            header.dtype,
            F::DTYPE
        )));
    }
    let payload = &rest[nl + 1..];
    if payload.len() != header.layout.total * F::BYTES {
        return Err(Error::Checkpoint(format!(
            "payload is {} bytes, layout needs {}",
            payload.len(),
            header.layout.total * F::BYTES
        )));
    }
    let data = payload.chunks_exact(F::BYTES).map(F::read_le).collect();
    Ok(Checkpoint {
        header,
        params: Params { data },
    })
}

pub fn save_checkpoint<F: Scalar>(path: &Path, ckpt: &Checkpoint<F>) -> Result<()> {
    write_atomic(path, &write_checkpoint(ckpt)?)
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
