use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Node, Tape, Var};

/// Output extent of a zero-padded correlation, or `None` if the kernel does
/// not fit.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds one image `[cin, h, w]` into `[cin*kh*kw, ho*wo]`.
fn im2col<T: Element>(g: &Geometry, x: &[T], cols: &mut [T]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, o) in out_row.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *o = if iw < 0 || iw >= g.w as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `[cin*kh*kw, ho*wo]` back into `[cin, h, w]`.
fn col2im<T: Element>(g: &Geometry, cols: &[T], dx: &mut [T]) {
    let p = g.p();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[iw as usize] = dst[iw as usize] + src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn geometry(xs: &[usize], ws: &[usize], stride: usize, pad: usize) -> Result<Geometry> {
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("expected 4-d input and kernel, got {xs:?} and {ws:?}"),
        ));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but kernel {ws:?} expects {}", xs[1], ws[1]),
        ));
    }
    let (h, w, kh, kw) = (xs[2], xs[3], ws[2], ws[3]);
    let (Some(ho), Some(wo)) = (
        conv_output_size(h, kh, stride, pad),
        conv_output_size(w, kw, stride, pad),
    ) else {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kh}x{kw} (stride {stride}, pad {pad}) does not fit input {h}x{w}"),
        ));
    };
    Ok(Geometry {
        cin: xs[1],
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    })
}

impl<T: Element> Tape<T> {
    /// Zero-padded 2-d cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kH,kW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let g = geometry(&xs, &ws, stride, pad)?;
        let (n, cout) = (xs[0], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?} does not match {cout} output channels", self.shape(b)),
                ));
            }
        }
        let (k, p) = (g.k(), g.p());
        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); k * p]
        };
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let in_len = g.cin * g.h * g.w;
            for (i, out_n) in out.chunks_exact_mut(cout * p).enumerate() {
                let x_n = &xv[i * in_len..(i + 1) * in_len];
                let cols_n: &[T] = if g.is_pointwise() {
                    x_n
                } else {
                    im2col(&g, x_n, &mut cols);
                    &cols
                };
                T::gemm(
                    cout,
                    k,
                    p,
                    T::one(),
                    wv,
                    (k, 1),
                    cols_n,
                    (p, 1),
                    T::zero(),
                    out_n,
                    (p, 1),
                );
            }
            if let Some(b) = b {
                let bv = self.value(b);
                for out_n in out.chunks_exact_mut(cout * p) {
                    for (plane, &bias) in out_n.chunks_exact_mut(p).zip(bv) {
                        plane.iter_mut().for_each(|o| *o = *o + bias);
                    }
                }
            }
        }
        Ok(self.push(vec![n, cout, g.ho, g.wo], out, Op::Conv2d { x, w, b, stride, pad }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<T: Element>(
    nodes: &[Node<T>],
    _out: &Node<T>,
    dy: &[T],
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    pad: usize,
    need_dx: bool,
) -> Vec<(Var, Vec<T>)> {
    let xn = &nodes[x.0];
    let wn = &nodes[w.0];
    let g = geometry(&xn.shape, &wn.shape, stride, pad).expect("validated in forward");
    let (n, cout, k, p) = (xn.shape[0], wn.shape[0], g.k(), g.p());
    let in_len = g.cin * g.h * g.w;
    let need_dw = wn.needs_grad;

    let mut dw = if need_dw { vec![T::zero(); cout * k] } else { Vec::new() };
    let mut dx = if need_dx {
        vec![T::zero(); xn.value.len()]
    } else {
        Vec::new()
    };
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    let mut dcols = if need_dx && !g.is_pointwise() {
        vec![T::zero(); k * p]
    } else {
        Vec::new()
    };

    for i in 0..n {
        let dy_n = &dy[i * cout * p..(i + 1) * cout * p];
        if need_dw {
            let x_n = &xn.value[i * in_len..(i + 1) * in_len];
            let cols_n: &[T] = if g.is_pointwise() {
                x_n
            } else {
                im2col(&g, x_n, &mut cols);
                &cols
            };
            // dW += dY_n * cols_n^T
            T::gemm(
                cout,
                p,
                k,
                T::one(),
                dy_n,
                (p, 1),
                cols_n,
                (1, p),
                T::one(),
                &mut dw,
                (k, 1),
            );
        }
        if need_dx {
            let dx_n = &mut dx[i * in_len..(i + 1) * in_len];
            if g.is_pointwise() {
                T::gemm(
                    k,
                    cout,
                    p,
                    T::one(),
                    &wn.value,
                    (1, k),
                    dy_n,
                    (p, 1),
                    T::one(),
                    dx_n,
                    (p, 1),
                );
            } else {
                T::gemm(
                    k,
                    cout,
                    p,
                    T::one(),
                    &wn.value,
                    (1, k),
                    dy_n,
                    (p, 1),
                    T::zero(),
                    &mut dcols,
                    (p, 1),
                );
                col2im(&g, &dcols, dx_n);
            }
        }
    }

    let mut grads = Vec::with_capacity(3);
    if need_dx {
        grads.push((x, dx));
    }
    if need_dw {
        grads.push((w, dw));
    }
    if let Some(b) = b {
        if nodes[b.0].needs_grad {
            let mut db = vec![T::zero(); cout];
            for dy_n in dy.chunks_exact(cout * p) {
                for (acc, plane) in db.iter_mut().zip(dy_n.chunks_exact(p)) {
                    *acc = *acc + plane.iter().copied().sum::<T>();
                }
            }
            grads.push((b, db));
        }
    }
    grads
}
