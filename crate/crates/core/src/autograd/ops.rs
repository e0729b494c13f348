//! Differentiable primitives.
//!
//! Each op is a method on [`Tape`] that computes its output eagerly, pushes a
//! node, and records whatever the backward rule needs. Layout conventions:
//! dense inputs are `[.., N]` (all leading axes are rows), images are
//! `[B, H, W, C]` or `[H, W, C]`, conv kernels are `[kh, kw, Cin, Cout]`.

use std::sync::Arc;

use rand::Rng;

use super::tape::{accumulate, NodeId, Tape};
use crate::error::{Error, Result};
use crate::parallel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by `k - 1`.
    Valid,
    /// Zero padding so the output keeps the input's spatial size.
    Same,
}

/// Batch statistics observed by a train-mode batch-norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

pub enum BatchNormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    pad_top: usize,
    pad_left: usize,
}

pub(crate) enum Op {
    Leaf,
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        n: usize,
        m: usize,
    },
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        bias: Option<NodeId>,
        geom: ConvGeom,
    },
    MaxPool2d {
        input: NodeId,
        argmax: Vec<usize>,
    },
    MaxOverTime {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Train mode differentiates through the batch statistics.
        train: bool,
    },
    Dropout {
        x: NodeId,
        mask: Vec<f64>,
    },
    Softmax {
        x: NodeId,
        k: usize,
    },
    CrossEntropy {
        probs: NodeId,
        labels: Vec<usize>,
        eps: f64,
        k: usize,
    },
    SoftmaxCrossEntropy {
        logits: NodeId,
        probs: Vec<f64>,
        labels: Vec<usize>,
        k: usize,
    },
    Concat {
        parts: Vec<NodeId>,
        widths: Vec<usize>,
    },
    Slice {
        x: NodeId,
        start: usize,
        len: usize,
        width: usize,
    },
    Reshape(NodeId),
    Embedding {
        table: NodeId,
        ids: Vec<Option<usize>>,
        dim: usize,
    },
    GatherRows {
        x: NodeId,
        idx: Vec<usize>,
        width: usize,
    },
    SelectRows {
        a: NodeId,
        b: NodeId,
        take_a: Vec<bool>,
        width: usize,
    },
    WeightedSum {
        x: NodeId,
        weights: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Dense { x, w, b, .. } => [Some(*x), Some(*w), *b].into_iter().flatten().collect(),
            Op::Conv2d {
                input, kernel, bias, ..
            } => [Some(*input), Some(*kernel), *bias].into_iter().flatten().collect(),
            Op::MaxPool2d { input, .. } | Op::MaxOverTime { input, .. } => vec![*input],
            Op::Relu(x) | Op::Sigmoid(x) | Op::Tanh(x) | Op::Reshape(x) => vec![*x],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Dropout { x, .. }
            | Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::GatherRows { x, .. }
            | Op::WeightedSum { x, .. } => vec![*x],
            Op::CrossEntropy { probs, .. } => vec![*probs],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Concat { parts, .. } => parts.clone(),
            Op::Embedding { table, .. } => vec![*table],
            Op::SelectRows { a, b, .. } => vec![*a, *b],
        }
    }

    pub(crate) fn backward(&self, tape: &Tape, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &tape.nodes[idx].value;
        match self {
            Op::Leaf => {}
            Op::Dense { x, w, b, n, m } => dense_backward(tape, grads, g, *x, *w, *b, *n, *m),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => conv_backward(tape, grads, g, *input, *kernel, *bias, geom),
            Op::MaxPool2d { input, argmax } | Op::MaxOverTime { input, argmax } => {
                let mut dx = vec![0.0; tape.value(*input).len()];
                for (o, &src) in argmax.iter().enumerate() {
                    dx[src] += g[o];
                }
                accumulate(tape, grads, *input, dx);
            }
            Op::Relu(x) => {
                let dx = g
                    .iter()
                    .zip(out.iter())
                    .map(|(&gi, &y)| if y > 0.0 { gi } else { 0.0 })
                    .collect();
                accumulate(tape, grads, *x, dx);
            }
            Op::Sigmoid(x) => {
                let dx = g.iter().zip(out.iter()).map(|(&gi, &y)| gi * y * (1.0 - y)).collect();
                accumulate(tape, grads, *x, dx);
            }
            Op::Tanh(x) => {
                let dx = g.iter().zip(out.iter()).map(|(&gi, &y)| gi * (1.0 - y * y)).collect();
                accumulate(tape, grads, *x, dx);
            }
            Op::Add(a, b) => {
                accumulate(tape, grads, *a, g.to_vec());
                accumulate(tape, grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let av = tape.value(*a);
                let bv = tape.value(*b);
                let da = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                let db = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                accumulate(tape, grads, *a, da);
                accumulate(tape, grads, *b, db);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => batch_norm_backward(tape, grads, g, *x, *gamma, *beta, xhat, inv_std, *train),
            Op::Dropout { x, mask } => {
                let dx = g.iter().zip(mask).map(|(gi, mi)| gi * mi).collect();
                accumulate(tape, grads, *x, dx);
            }
            Op::Softmax { x, k } => {
                let mut dx = vec![0.0; g.len()];
                for ((dxr, gr), yr) in dx.chunks_mut(*k).zip(g.chunks(*k)).zip(out.chunks(*k)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..*k {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(tape, grads, *x, dx);
            }
            Op::CrossEntropy { probs, labels, eps, k } => {
                let p = tape.value(*probs);
                let rows = labels.len() as f64;
                let mut dp = vec![0.0; p.len()];
                for (r, &label) in labels.iter().enumerate() {
                    let v = p[r * k + label];
                    if v > *eps {
                        dp[r * k + label] = -g[0] / (v * rows);
                    }
                }
                accumulate(tape, grads, *probs, dp);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
                k,
            } => {
                let rows = labels.len() as f64;
                let mut dz: Vec<f64> = probs.iter().map(|p| p * g[0] / rows).collect();
                for (r, &label) in labels.iter().enumerate() {
                    dz[r * k + label] -= g[0] / rows;
                }
                accumulate(tape, grads, *logits, dz);
            }
            Op::Concat { parts, widths } => {
                let total: usize = widths.iter().sum();
                let rows = g.len() / total;
                let mut offset = 0;
                for (part, &w) in parts.iter().zip(widths) {
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(tape, grads, *part, dp);
                    offset += w;
                }
            }
            Op::Slice { x, start, len, width } => {
                let rows = g.len() / len;
                let mut dx = vec![0.0; rows * width];
                for r in 0..rows {
                    dx[r * width + start..r * width + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                accumulate(tape, grads, *x, dx);
            }
            Op::Reshape(x) => accumulate(tape, grads, *x, g.to_vec()),
            Op::Embedding { table, ids, dim } => {
                let mut dt = vec![0.0; tape.value(*table).len()];
                for (pos, id) in ids.iter().enumerate() {
                    if let Some(id) = id {
                        let dst = &mut dt[id * dim..(id + 1) * dim];
                        for (d, gv) in dst.iter_mut().zip(&g[pos * dim..(pos + 1) * dim]) {
                            *d += gv;
                        }
                    }
                }
                accumulate(tape, grads, *table, dt);
            }
            Op::GatherRows { x, idx, width } => {
                let mut dx = vec![0.0; tape.value(*x).len()];
                for (r, &src) in idx.iter().enumerate() {
                    for c in 0..*width {
                        dx[src * width + c] += g[r * width + c];
                    }
                }
                accumulate(tape, grads, *x, dx);
            }
            Op::SelectRows { a, b, take_a, width } => {
                let mut da = vec![0.0; g.len()];
                let mut db = vec![0.0; g.len()];
                for (r, &from_a) in take_a.iter().enumerate() {
                    let dst = if from_a { &mut da } else { &mut db };
                    dst[r * width..(r + 1) * width].copy_from_slice(&g[r * width..(r + 1) * width]);
                }
                accumulate(tape, grads, *a, da);
                accumulate(tape, grads, *b, db);
            }
            Op::WeightedSum { x, weights } => {
                let dx = weights.iter().map(|w| w * g[0]).collect();
                accumulate(tape, grads, *x, dx);
            }
        }
    }
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

fn same_shape(tape: &Tape, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", tape.shape(a), tape.shape(b))));
    }
    Ok(())
}

impl Tape {
    /// Affine map `x·W + b` applied to every row of `x`.
    pub fn dense(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return Err(Error::shape("dense", format!("weights must be 2-D, got {ws:?}")));
        }
        let (n, m) = (ws[0], ws[1]);
        if last_dim(&xs) != n {
            return Err(Error::shape(
                "dense",
                format!("input {xs:?} does not match weights {ws:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [m] {
                return Err(Error::shape(
                    "dense",
                    format!("bias {:?} vs output width {m}", self.shape(b)),
                ));
            }
        }
        let rows = self.value(x).len() / n;
        let mut out = vec![0.0; rows * m];
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = b.map(|b| self.value(b));
            parallel::for_each_chunk_mut(&mut out, m, |r, row| {
                if let Some(bv) = bv {
                    row.copy_from_slice(bv);
                }
                for (i, &v) in xv[r * n..(r + 1) * n].iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for (o, wij) in row.iter_mut().zip(&wv[i * m..(i + 1) * m]) {
                        *o += v * wij;
                    }
                }
            });
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty shape") = m;
        self.push("dense", shape, out, Op::Dense { x, w, b, n, m })
    }

    pub fn conv2d(&mut self, input: NodeId, kernel: NodeId, bias: Option<NodeId>, padding: Padding) -> Result<NodeId> {
        let is = self.shape(input).to_vec();
        let ks = self.shape(kernel).to_vec();
        let (b, h, w, cin) = match *is.as_slice() {
            [h, w, c] => (1, h, w, c),
            [b, h, w, c] => (b, h, w, c),
            _ => return Err(Error::shape("conv2d", format!("input must be 3-D or 4-D, got {is:?}"))),
        };
        let &[kh, kw, kcin, cout] = ks.as_slice() else {
            return Err(Error::shape("conv2d", format!("kernel must be 4-D, got {ks:?}")));
        };
        if kcin != cin {
            return Err(Error::shape("conv2d", format!("input channels {cin} vs kernel {ks:?}")));
        }
        if let Some(bias) = bias {
            if self.shape(bias) != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} vs {cout} output channels", self.shape(bias)),
                ));
            }
        }
        let (ho, wo, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape(
                        "conv2d",
                        format!("kernel {kh}x{kw} larger than input {h}x{w}"),
                    ));
                }
                (h - kh + 1, w - kw + 1, 0, 0)
            }
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
        };
        let geom = ConvGeom {
            b,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            ho,
            wo,
            pad_top,
            pad_left,
        };
        let out = conv_forward(
            &geom,
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
        );
        let shape = if is.len() == 3 {
            vec![ho, wo, cout]
        } else {
            vec![b, ho, wo, cout]
        };
        self.push(
            "conv2d",
            shape,
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        )
    }

    /// 2×2 max pooling with stride 2. Odd extents keep a partial last window.
    pub fn max_pool2d(&mut self, input: NodeId) -> Result<NodeId> {
        let is = self.shape(input).to_vec();
        let (b, h, w, c) = match *is.as_slice() {
            [h, w, c] => (1, h, w, c),
            [b, h, w, c] => (b, h, w, c),
            _ => {
                return Err(Error::shape(
                    "max_pool2d",
                    format!("input must be 3-D or 4-D, got {is:?}"),
                ))
            }
        };
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let xv = self.value(input);
        let mut out = Vec::with_capacity(b * ho * wo * c);
        let mut argmax = Vec::with_capacity(b * ho * wo * c);
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_at = 0;
                        for iy in 2 * oy..(2 * oy + 2).min(h) {
                            for ix in 2 * ox..(2 * ox + 2).min(w) {
                                let at = ((bi * h + iy) * w + ix) * c + ch;
                                // Strict comparison keeps the first maximum in
                                // row-major order.
                                if xv[at] > best {
                                    best = xv[at];
                                    best_at = at;
                                }
                            }
                        }
                        out.push(best);
                        argmax.push(best_at);
                    }
                }
            }
        }
        let shape = if is.len() == 3 {
            vec![ho, wo, c]
        } else {
            vec![b, ho, wo, c]
        };
        self.push("max_pool2d", shape, out, Op::MaxPool2d { input, argmax })
    }

    /// Max over axis 1 of a `[B, T, C]` tensor, giving `[B, C]`.
    pub fn max_over_time(&mut self, input: NodeId) -> Result<NodeId> {
        let &[b, t, c] = self.shape(input) else {
            return Err(Error::shape(
                "max_over_time",
                format!("expected [B, T, C], got {:?}", self.shape(input)),
            ));
        };
        let xv = self.value(input);
        let mut out = vec![f64::NEG_INFINITY; b * c];
        let mut argmax = vec![0; b * c];
        for bi in 0..b {
            for ti in 0..t {
                for ch in 0..c {
                    let at = (bi * t + ti) * c + ch;
                    if xv[at] > out[bi * c + ch] {
                        out[bi * c + ch] = xv[at];
                        argmax[bi * c + ch] = at;
                    }
                }
            }
        }
        self.push("max_over_time", vec![b, c], out, Op::MaxOverTime { input, argmax })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        // NaN passes through so a diverging run is caught at the loss.
        let out = self
            .value(x)
            .iter()
            .map(|&v| if v > 0.0 || v.is_nan() { v } else { 0.0 })
            .collect();
        self.push("relu", self.shape(x).to_vec(), out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push("sigmoid", self.shape(x).to_vec(), out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push("tanh", self.shape(x).to_vec(), out, Op::Tanh(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self, "add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self, "mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b))
    }

    /// Per-feature batch normalization over all rows of `x` (last axis is the
    /// feature axis, so `[B, H, W, C]` normalizes per channel).
    ///
    /// Train mode returns the batch statistics so the caller can update its
    /// running estimates.
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mode: BatchNormMode<'_>,
        eps: f64,
    ) -> Result<(NodeId, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        let f = last_dim(&xs);
        if self.shape(gamma) != [f] || self.shape(beta) != [f] {
            return Err(Error::shape(
                "batch_norm",
                format!(
                    "gamma {:?} / beta {:?} vs {f} features",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            ));
        }
        let xv = self.value(x);
        let rows = xv.len() / f;
        let (mean, var, stats) = match mode {
            BatchNormMode::Train => {
                if rows < 2 {
                    return Err(Error::InvalidArgument(
                        "batch_norm in train mode needs at least 2 rows per feature".into(),
                    ));
                }
                let mut mean = vec![0.0; f];
                for row in xv.chunks(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0; f];
                for row in xv.chunks(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= rows as f64);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != f || var.len() != f {
                    return Err(Error::shape(
                        "batch_norm",
                        format!("running stats of length {} / {} vs {f}", mean.len(), var.len()),
                    ));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for ((row, hrow), orow) in xv.chunks(f).zip(xhat.chunks_mut(f)).zip(out.chunks_mut(f)) {
            for j in 0..f {
                hrow[j] = (row[j] - mean[j]) * inv_std[j];
                orow[j] = gv[j] * hrow[j] + bv[j];
            }
        }
        let train = stats.is_some();
        let id = self.push(
            "batch_norm",
            xs,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
        )?;
        Ok((id, stats))
    }

    /// Inverted dropout: survivors are scaled by `1/(1-rate)` so that eval
    /// mode is the identity (and returns `x` itself).
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, train: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push("dropout", self.shape(x).to_vec(), out, Op::Dropout { x, mask })
    }

    /// Softmax over the last axis, with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let k = last_dim(self.shape(x));
        let out = softmax_rows(self.value(x), k);
        self.push("softmax", self.shape(x).to_vec(), out, Op::Softmax { x, k })
    }

    /// Mean over rows of `-ln(max(p[label], eps))`.
    pub fn cross_entropy(&mut self, probs: NodeId, labels: &[usize], eps: f64) -> Result<NodeId> {
        let k = last_dim(self.shape(probs));
        let pv = self.value(probs);
        check_labels("cross_entropy", pv.len() / k, k, labels)?;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| -pv[r * k + l].max(eps).ln())
            .sum::<f64>()
            / labels.len() as f64;
        self.push(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
                eps,
                k,
            },
        )
    }

    /// Fused softmax + categorical cross-entropy, mean over rows. The backward
    /// rule is `(p - y) / rows`.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let k = last_dim(self.shape(logits));
        let zv = self.value(logits);
        check_labels("softmax_cross_entropy", zv.len() / k, k, labels)?;
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = &zv[r * k..(r + 1) * k];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
        }
        loss /= labels.len() as f64;
        let probs = softmax_rows(zv, k);
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
                k,
            },
        )
    }

    /// Concatenation along the last axis. All parts must agree on the leading
    /// axes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of an empty list".into()));
        };
        let lead = self.shape(first)[..self.shape(first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(
                    "concat",
                    format!("leading axes {:?} vs {lead:?}", &s[..s.len() - 1]),
                ));
            }
            widths.push(last_dim(s));
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(
            "concat",
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                widths,
            },
        )
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let width = last_dim(&xs);
        if len == 0 || start + len > width {
            return Err(Error::shape(
                "slice_last",
                format!("range {start}..{} of width {width}", start + len),
            ));
        }
        let rows = self.value(x).len() / width;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * width + start..r * width + start + len]);
        }
        let mut shape = xs;
        *shape.last_mut().expect("non-empty shape") = len;
        self.push("slice_last", shape, out, Op::Slice { x, start, len, width })
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let value = Arc::clone(&self.nodes[x.0].value);
        self.push_shared("reshape", shape, value, Op::Reshape(x))
    }

    /// Row lookup into a `[V, E]` table. `None` ids (padding or
    /// out-of-vocabulary) yield zero rows. Output shape is `lead ++ [E]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[Option<usize>], lead: &[usize]) -> Result<NodeId> {
        let &[v, dim] = self.shape(table) else {
            return Err(Error::shape(
                "embedding",
                format!("table must be 2-D, got {:?}", self.shape(table)),
            ));
        };
        if lead.iter().product::<usize>() != ids.len() {
            return Err(Error::shape(
                "embedding",
                format!("{} ids for lead shape {lead:?}", ids.len()),
            ));
        }
        if let Some(bad) = ids.iter().flatten().find(|&&i| i >= v) {
            return Err(Error::shape("embedding", format!("id {bad} out of range for {v} rows")));
        }
        let tv = self.value(table);
        let mut out = vec![0.0; ids.len() * dim];
        for (pos, id) in ids.iter().enumerate() {
            if let Some(id) = id {
                out[pos * dim..(pos + 1) * dim].copy_from_slice(&tv[id * dim..(id + 1) * dim]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(dim);
        self.push(
            "embedding",
            shape,
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                dim,
            },
        )
    }

    /// Picks rows of a `[R, F]` tensor (repeats allowed).
    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let &[r, width] = self.shape(x) else {
            return Err(Error::shape(
                "gather_rows",
                format!("expected 2-D input, got {:?}", self.shape(x)),
            ));
        };
        if idx.is_empty() || idx.iter().any(|&i| i >= r) {
            return Err(Error::shape("gather_rows", format!("indices {idx:?} for {r} rows")));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            out.extend_from_slice(&xv[i * width..(i + 1) * width]);
        }
        self.push(
            "gather_rows",
            vec![idx.len(), width],
            out,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
                width,
            },
        )
    }

    /// Row-wise choice: row `r` comes from `a` when `take_a[r]`, else from `b`.
    pub fn select_rows(&mut self, take_a: &[bool], a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape(self, "select_rows", a, b)?;
        let width = last_dim(self.shape(a));
        let rows = self.value(a).len() / width;
        if take_a.len() != rows {
            return Err(Error::shape(
                "select_rows",
                format!("mask of {} for {rows} rows", take_a.len()),
            ));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(av.len());
        for (r, &from_a) in take_a.iter().enumerate() {
            let src = if from_a { av } else { bv };
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        self.push(
            "select_rows",
            self.shape(a).to_vec(),
            out,
            Op::SelectRows {
                a,
                b,
                take_a: take_a.to_vec(),
                width,
            },
        )
    }

    /// `Σ xᵢ·wᵢ` with constant weights; reduces any tensor to a scalar.
    pub fn weighted_sum(&mut self, x: NodeId, weights: &[f64]) -> Result<NodeId> {
        if weights.len() != self.value(x).len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} values", weights.len(), self.value(x).len()),
            ));
        }
        let s = self.value(x).iter().zip(weights).map(|(a, b)| a * b).sum();
        self.push(
            "weighted_sum",
            vec![1],
            vec![s],
            Op::WeightedSum {
                x,
                weights: weights.to_vec(),
            },
        )
    }

    /// One LSTM cell step over a batch of rows.
    ///
    /// `w_ih: [I, 4U]`, `w_hh: [U, 4U]`, `bias: [4U]`, gate blocks ordered
    /// input, forget, candidate, output. Returns `(h, c)`.
    pub fn lstm_step(
        &mut self,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        w_ih: NodeId,
        w_hh: NodeId,
        bias: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let units = last_dim(self.shape(h_prev));
        if self.shape(w_hh) != [units, 4 * units] {
            return Err(Error::shape(
                "lstm_step",
                format!("w_hh {:?} for {units} units", self.shape(w_hh)),
            ));
        }
        same_shape(self, "lstm_step", h_prev, c_prev)?;
        let zx = self.dense(x, w_ih, Some(bias))?;
        let zh = self.dense(h_prev, w_hh, None)?;
        let z = self.add(zx, zh)?;
        let i_pre = self.slice_last(z, 0, units)?;
        let f_pre = self.slice_last(z, units, units)?;
        let g_pre = self.slice_last(z, 2 * units, units)?;
        let o_pre = self.slice_last(z, 3 * units, units)?;
        let i = self.sigmoid(i_pre)?;
        let f = self.sigmoid(f_pre)?;
        let g = self.tanh(g_pre)?;
        let o = self.sigmoid(o_pre)?;
        let keep = self.mul(f, c_prev)?;
        let write = self.mul(i, g)?;
        let c = self.add(keep, write)?;
        let c_act = self.tanh(c)?;
        let h = self.mul(o, c_act)?;
        Ok((h, c))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of a flat buffer with row width `k`.
pub fn softmax_rows(values: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (row, orow) in values.chunks(k).zip(out.chunks_mut(k)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, v) in orow.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        orow.iter_mut().for_each(|o| *o /= sum);
    }
    out
}

fn check_labels(op: &'static str, rows: usize, k: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(op, format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!(
            "{op}: label {bad} out of range for {k} classes"
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: NodeId,
    w: NodeId,
    b: Option<NodeId>,
    n: usize,
    m: usize,
) {
    let xv = tape.value(x);
    let wv = tape.value(w);
    let rows = xv.len() / n;
    if tape.requires_grad(x) {
        let mut dx = vec![0.0; rows * n];
        parallel::for_each_chunk_mut(&mut dx, n, |r, dxr| {
            let gr = &g[r * m..(r + 1) * m];
            for (i, d) in dxr.iter_mut().enumerate() {
                *d = wv[i * m..(i + 1) * m].iter().zip(gr).map(|(a, b)| a * b).sum();
            }
        });
        accumulate(tape, grads, x, dx);
    }
    if tape.requires_grad(w) {
        let mut dw = vec![0.0; n * m];
        parallel::for_each_chunk_mut(&mut dw, m, |i, dwr| {
            for r in 0..rows {
                let v = xv[r * n + i];
                if v == 0.0 {
                    continue;
                }
                for (d, gj) in dwr.iter_mut().zip(&g[r * m..(r + 1) * m]) {
                    *d += v * gj;
                }
            }
        });
        accumulate(tape, grads, w, dw);
    }
    if let Some(b) = b {
        let mut db = vec![0.0; m];
        for gr in g.chunks(m) {
            for (d, v) in db.iter_mut().zip(gr) {
                *d += v;
            }
        }
        accumulate(tape, grads, b, db);
    }
}

/// Input row `iy` feeding output row `oy` through kernel row `ky`, if inside
/// the unpadded input.
#[inline]
fn source_index(o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
    (o + k).checked_sub(pad).filter(|&i| i < extent)
}

fn conv_forward(g: &ConvGeom, input: &[f64], kernel: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let in_len = g.h * g.w * g.cin;
    let out_len = g.ho * g.wo * g.cout;
    let mut out = vec![0.0; g.b * out_len];
    parallel::for_each_chunk_mut(&mut out, out_len, |b, out_b| {
        let in_b = &input[b * in_len..(b + 1) * in_len];
        for oy in 0..g.ho {
            for ox in 0..g.wo {
                let o = &mut out_b[(oy * g.wo + ox) * g.cout..][..g.cout];
                if let Some(bias) = bias {
                    o.copy_from_slice(bias);
                }
                for ky in 0..g.kh {
                    let Some(iy) = source_index(oy, ky, g.pad_top, g.h) else {
                        continue;
                    };
                    for kx in 0..g.kw {
                        let Some(ix) = source_index(ox, kx, g.pad_left, g.w) else {
                            continue;
                        };
                        let px = &in_b[(iy * g.w + ix) * g.cin..][..g.cin];
                        let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                        for (ci, &v) in px.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let krow = &kernel[kbase + ci * g.cout..][..g.cout];
                            for (oc, kc) in o.iter_mut().zip(krow) {
                                *oc += v * kc;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    gout: &[f64],
    input: NodeId,
    kernel: NodeId,
    bias: Option<NodeId>,
    g: &ConvGeom,
) {
    let iv = tape.value(input);
    let kv = tape.value(kernel);
    let in_len = g.h * g.w * g.cin;
    let out_len = g.ho * g.wo * g.cout;
    if tape.requires_grad(input) {
        let mut din = vec![0.0; g.b * in_len];
        parallel::for_each_chunk_mut(&mut din, in_len, |b, din_b| {
            let gb = &gout[b * out_len..(b + 1) * out_len];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = &gb[(oy * g.wo + ox) * g.cout..][..g.cout];
                    for ky in 0..g.kh {
                        let Some(iy) = source_index(oy, ky, g.pad_top, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = source_index(ox, kx, g.pad_left, g.w) else {
                                continue;
                            };
                            let dpx = &mut din_b[(iy * g.w + ix) * g.cin..][..g.cin];
                            let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                            for (ci, d) in dpx.iter_mut().enumerate() {
                                let krow = &kv[kbase + ci * g.cout..][..g.cout];
                                *d += krow.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
                            }
                        }
                    }
                }
            }
        });
        accumulate(tape, grads, input, din);
    }
    if tape.requires_grad(kernel) {
        let dk = parallel::sum_ordered(g.b, kv.len(), |b, dk| {
            let in_b = &iv[b * in_len..(b + 1) * in_len];
            let gb = &gout[b * out_len..(b + 1) * out_len];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let go = &gb[(oy * g.wo + ox) * g.cout..][..g.cout];
                    for ky in 0..g.kh {
                        let Some(iy) = source_index(oy, ky, g.pad_top, g.h) else {
                            continue;
                        };
                        for kx in 0..g.kw {
                            let Some(ix) = source_index(ox, kx, g.pad_left, g.w) else {
                                continue;
                            };
                            let px = &in_b[(iy * g.w + ix) * g.cin..][..g.cin];
                            let kbase = (ky * g.kw + kx) * g.cin * g.cout;
                            for (ci, &v) in px.iter().enumerate() {
                                if v == 0.0 {
                                    continue;
                                }
                                let drow = &mut dk[kbase + ci * g.cout..][..g.cout];
                                for (d, gc) in drow.iter_mut().zip(go) {
                                    *d += v * gc;
                                }
                            }
                        }
                    }
                }
            }
        });
        accumulate(tape, grads, kernel, dk);
    }
    if let Some(bias) = bias {
        let mut db = vec![0.0; g.cout];
        for go in gout.chunks(g.cout) {
            for (d, v) in db.iter_mut().zip(go) {
                *d += v;
            }
        }
        accumulate(tape, grads, bias, db);
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_norm_backward(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    g: &[f64],
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    xhat: &[f64],
    inv_std: &[f64],
    train: bool,
) {
    let f = inv_std.len();
    let rows = g.len() / f;
    let gv = tape.value(gamma);
    let mut dgamma = vec![0.0; f];
    let mut dbeta = vec![0.0; f];
    for (gr, hr) in g.chunks(f).zip(xhat.chunks(f)) {
        for j in 0..f {
            dgamma[j] += gr[j] * hr[j];
            dbeta[j] += gr[j];
        }
    }
    if tape.requires_grad(x) {
        let mut dx = vec![0.0; g.len()];
        if train {
            // dx = inv_std/N · (N·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), with
            // dxhat = g·γ, so Σdxhat = γ·dβ and Σ(dxhat·xhat) = γ·dγ.
            let n = rows as f64;
            for ((dr, gr), hr) in dx.chunks_mut(f).zip(g.chunks(f)).zip(xhat.chunks(f)) {
                for j in 0..f {
                    dr[j] = gv[j] * inv_std[j] / n * (n * gr[j] - dbeta[j] - hr[j] * dgamma[j]);
                }
            }
        } else {
            for (dr, gr) in dx.chunks_mut(f).zip(g.chunks(f)) {
                for j in 0..f {
                    dr[j] = gr[j] * gv[j] * inv_std[j];
                }
            }
        }
        accumulate(tape, grads, x, dx);
    }
    accumulate(tape, grads, gamma, dgamma);
    accumulate(tape, grads, beta, dbeta);
}
