//! Computation tape for reverse-mode differentiation.
//!
//! Every op appends one node holding its output value and a record of how it
//! was produced. Node ids are assigned in push order, so the tape is
//! topologically sorted by construction and backward is a single reverse
//! sweep.

use std::sync::Arc;

use super::ops::Op;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Arc<Vec<f64>>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Records a forward computation. Confined to one thread; create one per
/// training step or evaluation batch.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    trap_non_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// When enabled, every op output is scanned and a NaN/Inf turns into
    /// [`Error::NonFinite`] naming the op.
    pub fn with_trap_non_finite(mut self, on: bool) -> Self {
        self.trap_non_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a tensor as a leaf. Gradients are tracked iff the tensor
    /// has `requires_grad` set.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.shared(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id.0];
        Tensor::from_shared(n.shape.clone(), Arc::clone(&n.value))
    }

    pub(crate) fn push(&mut self, name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<NodeId> {
        self.push_shared(name, shape, Arc::new(value), op)
    }

    pub(crate) fn push_shared(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        value: Arc<Vec<f64>>,
        op: Op,
    ) -> Result<NodeId> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len(), "{name}");
        if self.trap_non_finite && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Back-propagates from a single-element output. Each node is visited once,
    /// in reverse push order.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = &self.nodes[output.0];
        if out.value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must hold one scalar, has shape {:?}", out.shape),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                node.op.backward(self, idx, &g, &mut grads);
            }
            // Only leaf gradients are kept; intermediates are dropped once
            // propagated.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Output of [`Tape::backward`]: one optional gradient buffer per node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Vec<f64>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

/// Adds `g` into the gradient slot of `id`, skipping nodes that do not track
/// gradients.
pub(crate) fn accumulate(tape: &Tape, grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    if !tape.nodes[id.0].requires_grad {
        return;
    }
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.iter_mut().zip(&g) {
                *e += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
