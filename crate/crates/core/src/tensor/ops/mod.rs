//! Differentiable operators. Each submodule adds recording methods to
//! [`Tape`](super::Tape) and supplies the matching backward rule.

mod activation;
mod batchnorm;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod pool;

pub use batchnorm::{BatchNormState, BnMode};
pub use conv::conv_output_size;
pub use loss::smoothed_targets;

use super::tape::{Node, Var};
use crate::element::Element;

pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalMaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    Celu {
        x: Var,
        alpha: T,
    },
    Relu {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<T>,
    },
}

impl<T: Element> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::MaxPool2d { x, .. }
            | Op::GlobalMaxPool { x, .. }
            | Op::Celu { x, .. }
            | Op::Relu { x }
            | Op::Scale { x, .. }
            | Op::Sum { x }
            | Op::Reshape { x } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }

    /// Gradient contributions `(input, d loss / d input)` given the output gradient.
    pub(crate) fn backward(&self, nodes: &[Node<T>], out: &Node<T>, dy: &[T]) -> Vec<(Var, Vec<T>)> {
        let needs = |v: &Var| nodes[v.0].needs_grad;
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, stride, pad } => conv::backward(nodes, out, dy, *x, *w, *b, *stride, *pad, needs(x)),
            Op::MaxPool2d { x, argmax } | Op::GlobalMaxPool { x, argmax } => {
                vec![(*x, pool::scatter(nodes[x.0].value.len(), argmax, dy))]
            }
            Op::Linear { x, w, b } => linear::backward(nodes, dy, *x, *w, *b),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => batchnorm::backward(nodes, dy, *x, *gamma, *beta, xhat, inv_std, *batch_stats),
            Op::Celu { x, alpha } => vec![(*x, activation::celu_backward(&nodes[x.0].value, dy, *alpha))],
            Op::Relu { x } => vec![(*x, activation::relu_backward(&nodes[x.0].value, dy))],
            Op::Add { a, b } => vec![(*a, dy.to_vec()), (*b, dy.to_vec())],
            Op::Mul { a, b } => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                vec![
                    (*a, dy.iter().zip(bv).map(|(&g, &y)| g * y).collect()),
                    (*b, dy.iter().zip(av).map(|(&g, &x)| g * x).collect()),
                ]
            }
            Op::Scale { x, factor } => vec![(*x, dy.iter().map(|&g| g * *factor).collect())],
            Op::Sum { x } => vec![(*x, vec![dy[0]; nodes[x.0].value.len()])],
            Op::Reshape { x } => vec![(*x, dy.to_vec())],
            Op::CrossEntropy { logits, probs, targets } => {
                let n = nodes[logits.0].shape[0];
                let scale = dy[0] / T::of(n as f64);
                let g = probs.iter().zip(targets).map(|(&p, &t)| (p - t) * scale).collect();
                vec![(*logits, g)]
            }
        }
    }
}
