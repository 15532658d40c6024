use super::Op;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};

#[inline]
pub(crate) fn celu_scalar<T: Element>(x: T, alpha: T) -> T {
    if x >= T::zero() {
        x
    } else {
        alpha * (x / alpha).exp_m1()
    }
}

pub(super) fn celu_backward<T: Element>(x: &[T], dy: &[T], alpha: T) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&x, &g)| if x >= T::zero() { g } else { g * (x / alpha).exp() })
        .collect()
}

pub(super) fn relu_backward<T: Element>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect()
}

impl<T: Element> Tape<T> {
    /// `x` for `x >= 0`, `alpha * (exp(x / alpha) - 1)` otherwise.
    pub fn celu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("celu alpha must be positive, got {alpha}")));
        }
        let a = T::of(alpha);
        let out = self.value(x).iter().map(|&v| celu_scalar(v, a)).collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Celu { x, alpha: a }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(self.shape(x).to_vec(), out, Op::Relu { x })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn run_celu(x: f64, alpha: f64) -> f64 {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(&Tensor::scalar(x));
        let y = tape.celu(v, alpha).unwrap();
        tape.scalar(y)
    }

    #[test]
    fn celu_values() {
        assert_eq!(run_celu(1.0, 0.3), 1.0);
        assert_eq!(run_celu(0.0, 0.3), 0.0);
        // 0.3 * (e^-1 - 1)
        assert!((run_celu(-0.3, 0.3) - (-0.189_636_167_648_842_3)).abs() < 1e-12);
    }

    #[test]
    fn celu_rejects_nonpositive_alpha() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(&Tensor::scalar(1.0));
        assert!(matches!(tape.celu(v, 0.0), Err(Error::Config(_))));
        assert!(tape.celu(v, -1.0).is_err());
    }

    #[test]
    fn relu_values() {
        let mut tape = Tape::<f32>::new();
        let v = tape.constant(&Tensor::from_f64(&[3], &[-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(v);
        assert_eq!(tape.value(y), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_zero_subgradient() {
        let mut tape = Tape::<f64>::new();
        let v = tape.leaf(&Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap().with_grad());
        let y = tape.relu(v);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(v).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn celu_approaches_relu() {
        for i in 0..=600 {
            let x = -3.0 + i as f64 * 0.01;
            assert!((run_celu(x, 1e-6) - x.max(0.0)).abs() <= 1e-5, "x = {x}");
        }
    }
}
