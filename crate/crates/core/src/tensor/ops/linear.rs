use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Node, Tape, Var};

impl<T: Element> Tape<T> {
    /// `x: [N,D]`, `w: [K,D]`, `b: [K]` -> `x wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape(
                "linear",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        let (n, d, k) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [k] {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} does not match {k} outputs", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); n * k];
        T::gemm(
            n,
            d,
            k,
            T::one(),
            self.value(x),
            (d, 1),
            self.value(w),
            (1, d),
            T::zero(),
            &mut out,
            (k, 1),
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.chunks_exact_mut(k) {
                row.iter_mut().zip(bv).for_each(|(o, &bias)| *o = *o + bias);
            }
        }
        Ok(self.push(vec![n, k], out, Op::Linear { x, w, b }))
    }
}

pub(super) fn backward<T: Element>(nodes: &[Node<T>], dy: &[T], x: Var, w: Var, b: Option<Var>) -> Vec<(Var, Vec<T>)> {
    let xn = &nodes[x.0];
    let wn = &nodes[w.0];
    let (n, d, k) = (xn.shape[0], xn.shape[1], wn.shape[0]);
    let mut grads = Vec::with_capacity(3);
    if xn.needs_grad {
        let mut dx = vec![T::zero(); n * d];
        T::gemm(
            n,
            k,
            d,
            T::one(),
            dy,
            (k, 1),
            &wn.value,
            (d, 1),
            T::zero(),
            &mut dx,
            (d, 1),
        );
        grads.push((x, dx));
    }
    if wn.needs_grad {
        let mut dw = vec![T::zero(); k * d];
        T::gemm(
            k,
            n,
            d,
            T::one(),
            dy,
            (1, k),
            &xn.value,
            (d, 1),
            T::zero(),
            &mut dw,
            (d, 1),
        );
        grads.push((w, dw));
    }
    if let Some(b) = b {
        if nodes[b.0].needs_grad {
            let mut db = vec![T::zero(); k];
            for row in dy.chunks_exact(k) {
                db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
            }
            grads.push((b, db));
        }
    }
    grads
}
