use super::{OptConfig, OptState};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// One momentum-SGD update: `g += 2λw` (non-exempt), `v = μv + g`, `w -= lr·v`.
///
/// Every gradient is checked for non-finite values before anything is
/// modified.
pub fn sgd_step<T: Element>(params: &mut ParamSet<T>, state: &mut OptState<T>, lr: f64, cfg: &OptConfig) -> Result<()> {
    state.check_layout(params)?;
    for e in params.iter() {
        let g = e.tensor.grad().ok_or_else(|| Error::MissingGrad(e.name.clone()))?;
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "gradient of `{}` at element {pos} is {}",
                e.name, g[pos]
            )));
        }
    }
    let lr = T::of(lr);
    let mu = T::of(cfg.momentum);
    let decay = T::of(2.0 * cfg.weight_decay);
    for (e, v) in params.entries_mut().iter_mut().zip(&mut state.velocity) {
        let apply_decay = !e.decay_exempt && cfg.weight_decay != 0.0;
        let g = e.tensor.grad.take().expect("checked above");
        let w = e.tensor.data_mut();
        for i in 0..w.len() {
            let mut gi = g[i];
            if apply_decay {
                gi = gi + decay * w[i];
            }
            v[i] = mu * v[i] + gi;
            w[i] = w[i] - lr * v[i];
        }
        e.tensor.grad = Some(g);
    }
    state.step_index += 1;
    Ok(())
}
