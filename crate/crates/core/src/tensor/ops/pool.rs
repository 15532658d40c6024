use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};

/// Routes each output gradient to the input position that produced the max.
pub(super) fn scatter<T: Element>(len: usize, argmax: &[usize], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); len];
    for (&src, &g) in argmax.iter().zip(dy) {
        dx[src] = dx[src] + g;
    }
    dx
}

impl<T: Element> Tape<T> {
    /// `k x k` max pooling. Ties resolve to the first element in row-major
    /// window order.
    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("maxpool2d", format!("expected 4-d input, got {s:?}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if k == 0 || stride == 0 || k > h || k > w {
            return Err(Error::shape(
                "maxpool2d",
                format!("window {k} (stride {stride}) does not fit {h}x{w}"),
            ));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = base + oh * stride * w + ow * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oh * stride + i) * w + ow * stride + j;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(vec![n, c, ho, wo], out, Op::MaxPool2d { x, argmax }))
    }

    /// Per-channel spatial max: `[N,C,H,W] -> [N,C]`.
    pub fn global_maxpool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(Error::shape("global_maxpool", format!("expected 4-d input, got {s:?}")));
        }
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for plane in 0..n * c {
            let base = plane * hw;
            let mut best = base;
            for idx in base..base + hw {
                if xv[idx] > xv[best] {
                    best = idx;
                }
            }
            out.push(xv[best]);
            argmax.push(best);
        }
        Ok(self.push(vec![n, c], out, Op::GlobalMaxPool { x, argmax }))
    }
}
