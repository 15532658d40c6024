use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Subtracts, for each GC-eligible parameter, the mean of every output slice
/// of its gradient (all axes except the first). Other gradients are untouched.
pub fn centralize_gradients<T: Element>(params: &mut ParamSet<T>) -> Result<()> {
    for e in params.entries_mut() {
        if !e.gc_eligible {
            continue;
        }
        let rows = e.tensor.shape()[0];
        let name = e.name.clone();
        let g = e.tensor.grad.as_mut().ok_or(Error::MissingGrad(name))?;
        let slice = g.len() / rows;
        for row in g.chunks_exact_mut(slice) {
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / slice as f64;
            let m = T::of(mean);
            row.iter_mut().for_each(|v| *v = *v - m);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn with_grad(shape: &[usize], g: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let mut t = Tensor::zeros(shape);
        t.grad = Some(g.to_vec());
        p.register_with("w", t, false, true).unwrap();
        p
    }

    #[test]
    fn vector_slice() {
        let mut p = with_grad(&[1, 3], &[1.0, 2.0, 3.0]);
        centralize_gradients(&mut p).unwrap();
        assert_eq!(p.entries()[0].tensor.grad().unwrap(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn zero_mean_is_fixed_point() {
        let mut p = with_grad(&[2, 2], &[-1.5, 1.5, 4.0, -4.0]);
        centralize_gradients(&mut p).unwrap();
        assert_eq!(p.entries()[0].tensor.grad().unwrap(), &[-1.5, 1.5, 4.0, -4.0]);
    }

    #[test]
    fn ineligible_untouched_and_missing_grad_errors() {
        let mut p = ParamSet::<f64>::new();
        let mut b = Tensor::zeros(&[3]);
        b.grad = Some(vec![1.0, 2.0, 3.0]);
        p.register("bias", b).unwrap();
        centralize_gradients(&mut p).unwrap();
        assert_eq!(p.entries()[0].tensor.grad().unwrap(), &[1.0, 2.0, 3.0]);

        p.register("w", Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(centralize_gradients(&mut p), Err(Error::MissingGrad(_))));
    }
}
