//! On-disk feature cache keyed by sample id and DSP configuration hash.
//!
//! Record layout (little-endian): magic `EMFC`, `u32` version, `u32` rank,
//! `rank × u64` dims, then the row-major `f64` values. Writes go to a
//! temporary file that is renamed into place, so readers never observe a
//! partial record.

use std::fs;
use std::path::{Path, PathBuf};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMFC";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, id: &str, kind: &str, dsp_hash: &str) -> PathBuf {
        let safe: String = id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || "-_".contains(c) {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{safe}.{kind}.{dsp_hash}.bin"))
    }

    pub fn get(&self, id: &str, kind: &str, dsp_hash: &str) -> Result<Option<Tensor>> {
        let path = self.path(id, kind, dsp_hash);
        match fs::read(&path) {
            Ok(bytes) => decode(&bytes)
                .map(Some)
                .map_err(|msg| Error::Audio(format!("corrupt cache record {}: {msg}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn put(&self, id: &str, kind: &str, dsp_hash: &str, t: &Tensor) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let path = self.path(id, kind, dsp_hash);
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, encode(t)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Returns the cached tensor or computes, stores and returns it.
    pub fn get_or_insert_with(
        &self,
        id: &str,
        kind: &str,
        dsp_hash: &str,
        compute: impl FnOnce() -> Result<Tensor>,
    ) -> Result<Tensor> {
        if let Some(t) = self.get(id, kind, dsp_hash)? {
            return Ok(t);
        }
        let t = compute()?;
        self.put(id, kind, dsp_hash, &t)?;
        Ok(t)
    }
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * (t.shape().len() + t.numel()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut r = bytes;
    let mut take = |n: usize| -> std::result::Result<&[u8], String> {
        if r.len() < n {
            return Err("truncated".into());
        }
        let (head, rest) = r.split_at(n);
        r = rest;
        Ok(head)
    };
    if take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let n: usize = shape.iter().product();
    let raw = take(n.checked_mul(8).ok_or("shape overflow")?)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if !r.is_empty() {
        return Err("trailing bytes".into());
    }
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_keying() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path().join("c"));
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, 7.0]).unwrap();
        assert!(cache.get("s/1", "mfsc", "abc").unwrap().is_none());
        cache.put("s/1", "mfsc", "abc", &t).unwrap();
        assert_eq!(cache.get("s/1", "mfsc", "abc").unwrap().unwrap(), t);
        assert!(cache.get("s/1", "mfsc", "abd").unwrap().is_none());
        assert!(cache.get("s/1", "lld", "abc").unwrap().is_none());
    }

    #[test]
    fn computes_once() {
        let dir = tempfile::tempdir().unwrap();
        let cache = FeatureCache::new(dir.path());
        let mut calls = 0;
        for _ in 0..2 {
            cache
                .get_or_insert_with("a", "lld", "h", || {
                    calls += 1;
                    Ok(Tensor::vector(vec![1.0]))
                })
                .unwrap();
        }
        assert_eq!(calls, 1);
    }

    #[test]
    fn detects_corruption() {
        let t = Tensor::vector(vec![1.0, 2.0]);
        let bytes = encode(&t);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(decode(&long).is_err());
    }
}
