//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `EMOFUSE\0`, `u32` format version, `u64`
//! metadata length, metadata as JSON, `u64` tensor count, then per tensor:
//! `u32` name length, UTF-8 name, `u8` kind, `u32` rank, `rank × u64` dims,
//! row-major `f64` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::params::{ParamKind, ParamStore};
use crate::audio::MinMaxStats;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMOFUSE\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub vocab: Vec<String>,
    pub lld_stats: Option<MinMaxStats>,
    pub fold: Option<usize>,
}

pub fn encode(model: &Model, seed: u64, lld_stats: Option<&MinMaxStats>, fold: Option<usize>) -> Vec<u8> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        seed,
        vocab: model.vocab.clone(),
        lld_stats: lld_stats.cloned(),
        fold,
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (name, p) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(match p.kind {
            ParamKind::Trainable => 0,
            ParamKind::Frozen => 1,
            ParamKind::Buffer => 2,
        });
        out.extend_from_slice(&(p.tensor.shape().len() as u32).to_le_bytes());
        for &d in p.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            .map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let mut r = Reader(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = r.u64()?;
    let meta: CheckpointMeta =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let count = r.u64()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let kind = match r.take(1)?[0] {
            0 => ParamKind::Trainable,
            1 => ParamKind::Frozen,
            2 => ParamKind::Buffer,
            k => return Err(Error::Checkpoint(format!("`{name}`: unknown kind {k}"))),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: shape overflow")))?;
        let data = r
            .take(numel)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
        params.insert(name, t, kind);
    }
    if !r.0.is_empty() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let model = Model::from_parts(meta.config.clone(), params, meta.vocab.clone())?;
    Ok((model, meta))
}

pub fn save(path: &Path, model: &Model, seed: u64, lld_stats: Option<&MinMaxStats>, fold: Option<usize>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(model, seed, lld_stats, fold)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
