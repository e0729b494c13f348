//! The assembled multimodal network.

use std::sync::Arc;

use super::config::{Branch, ModelConfig, SENTENCE_LEN};
use super::forward::{fusion_forward, lld_dnn, mfsc_cnn_lstm, text_cnn, Ctx};
use super::layout::{aux_specs, check_store, initialize, model_specs, ParamSpec};
use super::params::ParamStore;
use crate::audio::MfscMap;
use crate::autograd::init::stream;
use crate::autograd::ops::softmax_rows;
use crate::autograd::NodeId;
use crate::error::{Error, Result};
use crate::parallel;
use crate::text::EmbeddingTable;

/// Model-ready inputs of one sample. Fields for inactive branches may be
/// empty.
#[derive(Clone, Debug, Default)]
pub struct SampleInput {
    /// Word-table row per sentence position ([`SENTENCE_LEN`] entries).
    pub word_ids: Vec<Option<usize>>,
    /// POS tag index per sentence position.
    pub pos_ids: Vec<Option<usize>>,
    pub mfsc: Option<Arc<MfscMap>>,
    /// Normalized LLD vector.
    pub lld: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Samples per eval-mode forward pass.
pub const EVAL_BATCH: usize = 32;

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Word-table vocabulary in row order (empty without the word branch).
    pub vocab: Vec<String>,
}

impl Model {
    /// Fresh model. `words` is required when the word branch is active and
    /// becomes the embedding table (its vocabulary is stored with the model).
    pub fn new(config: ModelConfig, words: Option<&EmbeddingTable>, seed: u64) -> Result<Self> {
        config.validate()?;
        let (vocab, table) = match (config.branches.contains(Branch::Word), words) {
            (true, Some(t)) => {
                if t.dim() != config.word_dim {
                    return Err(Error::config(
                        "word_dim",
                        format!("configured {} but the embedding file has {}", config.word_dim, t.dim()),
                    ));
                }
                let tensor = if t.is_empty() {
                    crate::autograd::Tensor::zeros(&[1, t.dim()])
                } else {
                    t.to_tensor()
                };
                (t.words().to_vec(), Some(tensor))
            }
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "the word branch needs an embedding table".into(),
                ))
            }
            (false, _) => (Vec::new(), None),
        };
        let specs = model_specs(&config, vocab.len());
        let mut params = ParamStore::new();
        initialize(&mut params, &specs, seed, table.as_ref())?;
        Ok(Self { config, params, vocab })
    }

    /// Rebuilds a model from stored parameters, validating every shape.
    pub fn from_parts(config: ModelConfig, params: ParamStore, vocab: Vec<String>) -> Result<Self> {
        config.validate()?;
        check_store(&params, &model_specs(&config, vocab.len()))?;
        Ok(Self { config, params, vocab })
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        model_specs(&self.config, self.vocab.len())
    }

    /// Adds freshly initialized auxiliary heads for every active branch.
    pub fn add_aux_heads(&mut self, seed: u64) -> Result<()> {
        for b in self.config.branches.iter() {
            initialize(&mut self.params, &aux_specs(&self.config, b), seed, None)?;
        }
        Ok(())
    }

    pub fn remove_aux_heads(&mut self) {
        self.params.split_off_prefix("aux/");
    }

    /// Branch outputs for a batch, in canonical branch order.
    pub fn features(&self, ctx: &mut Ctx<'_>, batch: &[&SampleInput]) -> Result<Vec<(Branch, NodeId)>> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let b = batch.len();
        let mut out = Vec::new();
        for branch in self.config.branches.iter() {
            let node = match branch {
                Branch::Word | Branch::Pos => {
                    let mut ids = Vec::with_capacity(b * SENTENCE_LEN);
                    for s in batch {
                        let row = if branch == Branch::Word {
                            &s.word_ids
                        } else {
                            &s.pos_ids
                        };
                        if row.len() != SENTENCE_LEN {
                            return Err(Error::shape(
                                "text_cnn",
                                format!("{} ids per sentence, expected {SENTENCE_LEN}", row.len()),
                            ));
                        }
                        ids.extend_from_slice(row);
                    }
                    text_cnn(ctx, branch, &ids, b)?
                }
                Branch::Mfsc => {
                    let maps = batch
                        .iter()
                        .map(|s| s.mfsc.as_deref())
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| Error::InvalidArgument("sample lacks an MFSC map".into()))?;
                    mfsc_cnn_lstm(ctx, &maps)?
                }
                Branch::Lld => {
                    let vecs = batch
                        .iter()
                        .map(|s| s.lld.as_deref())
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| Error::InvalidArgument("sample lacks an LLD vector".into()))?;
                    lld_dnn(ctx, &vecs)?
                }
            };
            out.push((branch, node));
        }
        Ok(out)
    }

    pub fn logits(&self, ctx: &mut Ctx<'_>, batch: &[&SampleInput]) -> Result<NodeId> {
        let feats: Vec<NodeId> = self.features(ctx, batch)?.into_iter().map(|(_, n)| n).collect();
        fusion_forward(ctx, &feats)
    }

    /// Eval-mode logits, one row of `K` per sample.
    pub fn eval_logits(&self, batch: &[&SampleInput]) -> Result<Vec<Vec<f64>>> {
        let k = self.config.num_classes;
        let chunks: Vec<&[&SampleInput]> = batch.chunks(EVAL_BATCH).collect();
        let results = parallel::map(chunks.len(), |i| -> Result<Vec<f64>> {
            let mut rng = stream(0, "eval");
            let mut ctx = Ctx::new(&self.params, &self.config, false, &mut rng);
            let z = self.logits(&mut ctx, chunks[i])?;
            Ok(ctx.tape.value(z).to_vec())
        });
        let mut out = Vec::with_capacity(batch.len());
        for r in results {
            out.extend(r?.chunks(k).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Eval-mode class and probability vector per sample.
    pub fn predict(&self, batch: &[&SampleInput]) -> Result<Vec<Prediction>> {
        let k = self.config.num_classes;
        Ok(self
            .eval_logits(batch)?
            .into_iter()
            .map(|z| {
                let probs = softmax_rows(&z, k);
                let class = argmax(&probs);
                Prediction { class, probs }
            })
            .collect())
    }

    /// Eval-mode concatenated branch features, one row per sample.
    pub fn eval_features(&self, batch: &[&SampleInput]) -> Result<Vec<Vec<f64>>> {
        let width = self.config.fusion_input();
        let chunks: Vec<&[&SampleInput]> = batch.chunks(EVAL_BATCH).collect();
        let results = parallel::map(chunks.len(), |i| -> Result<Vec<f64>> {
            let mut rng = stream(0, "eval");
            let mut ctx = Ctx::new(&self.params, &self.config, false, &mut rng);
            let feats: Vec<NodeId> = self
                .features(&mut ctx, chunks[i])?
                .into_iter()
                .map(|(_, n)| n)
                .collect();
            let cat = ctx.tape.concat(&feats)?;
            Ok(ctx.tape.value(cat).to_vec())
        });
        let mut out = Vec::with_capacity(batch.len());
        for r in results {
            out.extend(r?.chunks(width).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Index of the largest value, first on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
