use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::ops::Op;
use super::Tensor;
use crate::element::Element;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub needs_grad: bool,
    /// Index into the owning parameter set, for parameter leaves.
    pub param: Option<usize>,
    pub op: Op<T>,
}

/// Records operations in execution order and replays them backwards.
///
/// A tape is single-use: after [`Tape::backward`] the gradients of every leaf
/// that requires them are available through [`Tape::grad`], and a second
/// backward call fails.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Records a leaf; it receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push_node(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            needs_grad: t.requires_grad,
            param: None,
            op: Op::Leaf,
        })
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push_node(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            needs_grad: false,
            param: None,
            op: Op::Leaf,
        })
    }

    /// Records a trainable parameter leaf tagged with its registry index.
    pub fn param(&mut self, index: usize, t: &Tensor<T>) -> Var {
        self.push_node(Node {
            shape: t.shape().to_vec(),
            value: t.data().to_vec(),
            needs_grad: true,
            param: Some(index),
            op: Op::Leaf,
        })
    }

    pub(crate) fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let needs_grad = op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(Node {
            shape,
            value,
            needs_grad,
            param: None,
            op,
        })
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.clone()).expect("node shape matches its buffer")
    }

    /// Hash of every discrete branch recorded so far: pooling winners and
    /// ReLU input signs. Two evaluations with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for n in &self.nodes {
            match &n.op {
                Op::MaxPool2d { argmax, .. } | Op::GlobalMaxPool { argmax, .. } => argmax.hash(&mut h),
                Op::Relu { x } => {
                    for v in &self.nodes[x.0].value {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// First element of a value; intended for scalar losses.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Gradient of a leaf after backward.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(registry index, gradient)` for every parameter leaf reached by backward.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> + '_ {
        self.nodes
            .iter()
            .zip(&self.grads)
            .filter_map(|(n, g)| match (n.param, g) {
                (Some(i), Some(g)) => Some((i, g.as_slice())),
                _ => None,
            })
    }

    /// Propagates d(loss)/d(·) to every leaf that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.nodes[loss.0].shape),
            ));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(out_grad) = grads[i].take() else {
                continue;
            };
            for (input, g) in node.op.backward(&self.nodes, node, &out_grad) {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot => *slot = Some(g),
                }
            }
        }
        self.grads = grads;
        Ok(())
    }
}
