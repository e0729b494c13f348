//! Forward construction of the branch and fusion networks on a tape.

use std::collections::BTreeMap;

use super::config::{Branch, ModelConfig, FILTER_WIDTHS, MFSC_BANDS, MFSC_FRAMES, MFSC_PLANES, SENTENCE_LEN};
use super::params::{ParamKind, ParamStore};
use crate::audio::MfscMap;
use crate::autograd::init::RngStream;
use crate::autograd::{BatchNormMode, BatchStats, Gradients, NodeId, Padding, Tape};
use crate::error::{Error, Result};

/// One forward pass: the tape, the parameters bound into it and the
/// batch-norm statistics observed in train mode.
pub struct Ctx<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    cfg: &'a ModelConfig,
    bound: BTreeMap<String, NodeId>,
    train: bool,
    rng: &'a mut RngStream,
    bn_stats: Vec<(String, BatchStats)>,
}

/// What remains of a [`Ctx`] once the graph is built.
pub struct Finished {
    pub tape: Tape,
    pub bound: BTreeMap<String, NodeId>,
    pub bn_stats: Vec<(String, BatchStats)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, cfg: &'a ModelConfig, train: bool, rng: &'a mut RngStream) -> Self {
        Self {
            tape: Tape::new(),
            store,
            cfg,
            bound: BTreeMap::new(),
            train,
            rng,
            bn_stats: Vec::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        self.cfg
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Leaf node for a stored parameter, created once per pass. Trainable
    /// parameters track gradients in train mode.
    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let p = self
            .store
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter `{name}` is not initialized")))?;
        let t = p
            .tensor
            .clone()
            .with_requires_grad(self.train && p.kind == ParamKind::Trainable);
        let id = self.tape.leaf(&t);
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId> {
        self.tape.dropout(x, rate, self.train, &mut *self.rng)
    }

    /// Batch norm over the last axis with the parameters under `prefix/bn`.
    pub fn batch_norm(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let gamma = self.param(&format!("{prefix}/bn/gamma"))?;
        let beta = self.param(&format!("{prefix}/bn/beta"))?;
        let eps = self.cfg.bn_eps;
        if self.train {
            let (y, stats) = self.tape.batch_norm(x, gamma, beta, BatchNormMode::Train, eps)?;
            self.bn_stats
                .push((prefix.to_string(), stats.expect("train mode returns stats")));
            Ok(y)
        } else {
            let store = self.store;
            let mean = store.tensor(&format!("{prefix}/bn/running_mean"))?.data();
            let var = store.tensor(&format!("{prefix}/bn/running_var"))?.data();
            let (y, _) = self
                .tape
                .batch_norm(x, gamma, beta, BatchNormMode::Eval { mean, var }, eps)?;
            Ok(y)
        }
    }

    /// `x·W → batch norm → ReLU → dropout`, parameters under `prefix`.
    pub fn dense_block(&mut self, prefix: &str, x: NodeId, rate: f64) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}/weight"))?;
        let y = self.tape.dense(x, w, None)?;
        let y = self.batch_norm(prefix, y)?;
        let y = self.tape.relu(y)?;
        self.dropout(y, rate)
    }

    /// Affine classifier `x·W + b` under `prefix`.
    pub fn classifier(&mut self, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = self.param(&format!("{prefix}/weight"))?;
        let b = self.param(&format!("{prefix}/bias"))?;
        self.tape.dense(x, w, Some(b))
    }

    pub fn finish(self) -> Finished {
        Finished {
            tape: self.tape,
            bound: self.bound,
            bn_stats: self.bn_stats,
        }
    }
}

impl Finished {
    /// Copies the gradients of bound parameters into the store.
    pub fn write_grads(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (name, &id) in &self.bound {
            if let Some(g) = grads.get(id) {
                store.tensor_mut(name)?.set_grad(g.to_vec())?;
            }
        }
        Ok(())
    }

    /// Folds the observed batch statistics into the running estimates:
    /// `running ← momentum · running + (1 − momentum) · batch`.
    pub fn update_running_stats(&self, store: &mut ParamStore, momentum: f64) -> Result<()> {
        for (prefix, stats) in &self.bn_stats {
            for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
                let t = store.tensor_mut(&format!("{prefix}/bn/{suffix}"))?;
                for (r, b) in t.data_mut().iter_mut().zip(batch) {
                    *r = momentum * *r + (1.0 - momentum) * b;
                }
            }
        }
        Ok(())
    }
}

/// Word or POS CNN over a batch of `b` id sequences of [`SENTENCE_LEN`]
/// each (concatenated), giving `[b, branch_width]`.
pub fn text_cnn(ctx: &mut Ctx<'_>, branch: Branch, ids: &[Option<usize>], b: usize) -> Result<NodeId> {
    if ids.len() != b * SENTENCE_LEN {
        return Err(Error::shape(
            "text_cnn",
            format!("{} ids for {b} sentences of {SENTENCE_LEN}", ids.len()),
        ));
    }
    let p = branch.name();
    let table = ctx.param(&format!("{p}/embedding"))?;
    let e = ctx.tape.shape(table)[1];
    let emb = ctx.tape.embedding(table, ids, &[b, SENTENCE_LEN])?;
    let x = ctx.tape.reshape(emb, vec![b, SENTENCE_LEN, e, 1])?;
    let nf = ctx.cfg.text_filters();
    let mut pooled = Vec::with_capacity(FILTER_WIDTHS.len());
    for w in FILTER_WIDTHS {
        let prefix = format!("{p}/conv{w}");
        let k = ctx.param(&format!("{prefix}/kernel"))?;
        let y = ctx.tape.conv2d(x, k, None, Padding::Valid)?;
        let y = ctx.batch_norm(&prefix, y)?;
        let y = ctx.tape.relu(y)?;
        let y = ctx.tape.reshape(y, vec![b, SENTENCE_LEN + 1 - w, nf])?;
        pooled.push(ctx.tape.max_over_time(y)?);
    }
    let cat = ctx.tape.concat(&pooled)?;
    let rate = ctx.cfg.dropout.text;
    ctx.dropout(cat, rate)
}

/// Shared conv stack over every segment, then an LSTM over each sample's
/// segment sequence. Returns the final hidden state, `[b, branch_width]`.
pub fn mfsc_cnn_lstm(ctx: &mut Ctx<'_>, maps: &[&MfscMap]) -> Result<NodeId> {
    let seg_len = MFSC_FRAMES * MFSC_BANDS * MFSC_PLANES;
    let mut data = Vec::new();
    let mut counts = Vec::with_capacity(maps.len());
    for m in maps {
        if m.segment_shape() != [MFSC_FRAMES, MFSC_BANDS, MFSC_PLANES] {
            return Err(Error::shape(
                "mfsc_cnn_lstm",
                format!(
                    "segment shape {:?}, expected [{MFSC_FRAMES}, {MFSC_BANDS}, {MFSC_PLANES}]",
                    m.segment_shape()
                ),
            ));
        }
        counts.push(m.n());
        data.extend_from_slice(m.segments().data());
    }
    let total: usize = counts.iter().sum();
    debug_assert_eq!(data.len(), total * seg_len);
    let mut x = ctx
        .tape
        .constant(vec![total, MFSC_FRAMES, MFSC_BANDS, MFSC_PLANES], data)?;

    let conv_rate = ctx.cfg.dropout.mfsc_conv;
    for i in 1..=4 {
        let prefix = format!("mfsc/conv{i}");
        let k = ctx.param(&format!("{prefix}/kernel"))?;
        let y = ctx.tape.conv2d(x, k, None, Padding::Same)?;
        let y = ctx.batch_norm(&prefix, y)?;
        let y = ctx.tape.relu(y)?;
        let y = ctx.tape.max_pool2d(y)?;
        x = ctx.dropout(y, conv_rate)?;
    }
    let flat = ctx.cfg.mfsc_flat();
    let x = ctx.tape.reshape(x, vec![total, flat])?;
    let dense_rate = ctx.cfg.dropout.mfsc_dense;
    let x = ctx.dense_block("mfsc/fc", x, dense_rate)?;
    let seq = ctx.dense_block("mfsc/dense", x, dense_rate)?;

    let units = ctx.cfg.branch_width();
    let b = maps.len();
    let w_ih = ctx.param("mfsc/lstm/w_ih")?;
    let w_hh = ctx.param("mfsc/lstm/w_hh")?;
    let bias = ctx.param("mfsc/lstm/bias")?;
    let mut h = ctx.tape.constant(vec![b, units], vec![0.0; b * units])?;
    let mut c = h;
    let offsets: Vec<usize> = counts
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let steps = counts.iter().copied().max().unwrap_or(0);
    for t in 0..steps {
        let rows: Vec<usize> = offsets.iter().zip(&counts).map(|(&o, &n)| o + t.min(n - 1)).collect();
        let xt = ctx.tape.gather_rows(seq, &rows)?;
        let (h_new, c_new) = ctx.tape.lstm_step(xt, h, c, w_ih, w_hh, bias)?;
        let active: Vec<bool> = counts.iter().map(|&n| t < n).collect();
        if active.iter().all(|&a| a) {
            (h, c) = (h_new, c_new);
        } else {
            h = ctx.tape.select_rows(&active, h_new, h)?;
            c = ctx.tape.select_rows(&active, c_new, c)?;
        }
    }
    ctx.dropout(h, dense_rate)
}

/// LLD DNN over `[b, D]` normalized vectors.
pub fn lld_dnn(ctx: &mut Ctx<'_>, vectors: &[&[f64]]) -> Result<NodeId> {
    let d = ctx.cfg.lld_dim;
    let mut data = Vec::with_capacity(vectors.len() * d);
    for v in vectors {
        if v.len() != d {
            return Err(Error::shape(
                "lld_dnn",
                format!("vector of {} values, configured dimension {d}", v.len()),
            ));
        }
        data.extend_from_slice(v);
    }
    let x = ctx.tape.constant(vec![vectors.len(), d], data)?;
    let rate = ctx.cfg.dropout.lld;
    let x = ctx.dense_block("lld/hidden1", x, rate)?;
    ctx.dense_block("lld/hidden2", x, rate)
}

/// Fusion DNN over concatenated branch features, returning `[b, K]` logits.
pub fn fusion_forward(ctx: &mut Ctx<'_>, features: &[NodeId]) -> Result<NodeId> {
    let width = features
        .iter()
        .map(|&f| *ctx.tape.shape(f).last().unwrap_or(&0))
        .sum::<usize>();
    if width != ctx.cfg.fusion_input() {
        return Err(Error::shape(
            "fusion_forward",
            format!(
                "features of total width {width}, fusion expects {} ({} active branches)",
                ctx.cfg.fusion_input(),
                ctx.cfg.branches.len()
            ),
        ));
    }
    let x = ctx.tape.concat(features)?;
    let rate = ctx.cfg.dropout.fusion;
    let x = ctx.dense_block("fusion/hidden1", x, rate)?;
    let x = ctx.dense_block("fusion/hidden2", x, rate)?;
    ctx.classifier("fusion/output", x)
}
