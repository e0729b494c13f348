//! Named parameter storage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Part of the model but held fixed (frozen embeddings, frozen branches).
    Frozen,
    /// Non-learned state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub tensor: Tensor,
    pub kind: ParamKind,
}

impl Param {
    pub fn is_trainable(&self) -> bool {
        self.kind == ParamKind::Trainable
    }
}

/// Parameters keyed by slash-separated names such as `mfsc/conv1/kernel`.
/// Iteration order is the lexicographic name order, which keeps checkpoints
/// and optimizer updates deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, kind: ParamKind) {
        self.params.insert(name.into(), Param { tensor, kind });
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Total scalar count of trainable parameters whose name starts with
    /// `prefix`.
    pub fn trainable_scalars(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, p)| n.starts_with(prefix) && p.is_trainable())
            .map(|(_, p)| p.tensor.numel())
            .sum()
    }

    /// Changes the kind of every parameter under `prefix`, except buffers.
    pub fn set_kind(&mut self, prefix: &str, kind: ParamKind) {
        for (n, p) in self.params.iter_mut() {
            if n.starts_with(prefix) && p.kind != ParamKind::Buffer {
                p.kind = kind;
            }
        }
    }

    pub fn clear_grads(&mut self) {
        for p in self.params.values_mut() {
            p.tensor.clear_grad();
        }
    }

    pub fn merge(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Moves every parameter under `prefix` into a new store.
    pub fn split_off_prefix(&mut self, prefix: &str) -> ParamStore {
        let names: Vec<String> = self.params.keys().filter(|n| n.starts_with(prefix)).cloned().collect();
        let mut out = ParamStore::new();
        for n in names {
            let p = self.params.remove(&n).expect("name listed above");
            out.params.insert(n, p);
        }
        out
    }

    /// SHA-256 over names, shapes and exact bit patterns of every tensor
    /// (buffers included) under `prefix`.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (n, p) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(n.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_tracks_values_and_prefix() {
        let mut s = ParamStore::new();
        s.insert("a/w", Tensor::vector(vec![1.0, 2.0]), ParamKind::Trainable);
        s.insert("b/w", Tensor::vector(vec![3.0]), ParamKind::Trainable);
        let before = s.checksum("a/");
        s.tensor_mut("b/w").unwrap().data_mut()[0] = 4.0;
        assert_eq!(before, s.checksum("a/"));
        s.tensor_mut("a/w").unwrap().data_mut()[0] = 1.5;
        assert_ne!(before, s.checksum("a/"));
    }

    #[test]
    fn set_kind_skips_buffers() {
        let mut s = ParamStore::new();
        s.insert("x/w", Tensor::vector(vec![1.0]), ParamKind::Trainable);
        s.insert("x/running_mean", Tensor::vector(vec![0.0]), ParamKind::Buffer);
        s.set_kind("x/", ParamKind::Frozen);
        assert_eq!(s.get("x/w").unwrap().kind, ParamKind::Frozen);
        assert_eq!(s.get("x/running_mean").unwrap().kind, ParamKind::Buffer);
        assert_eq!(s.trainable_scalars("x/"), 0);
    }
}
