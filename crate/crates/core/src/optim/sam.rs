use super::{centralize_gradients, sgd_step, OptConfig, OptState};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

/// Which of the two gradient evaluations the closure is being asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamPass {
    /// At the current weights.
    Clean,
    /// At the ascended weights `w + ε`.
    Perturbed,
}

/// Sharpness-aware update.
///
/// `closure` must recompute the loss and fill every parameter gradient at the
/// parameters' current values. The ascent `ε = ρ g / ‖g‖₂` uses one global
/// norm over all gradients; the descent step starts from the exact original
/// weights and uses the gradient taken at `w + ε`. With GC enabled both
/// gradients are centralized. Returns `(loss at w, loss at w + ε)`.
pub fn sam_step<T, F>(
    params: &mut ParamSet<T>,
    state: &mut OptState<T>,
    lr: f64,
    cfg: &OptConfig,
    mut closure: F,
) -> Result<(f64, f64)>
where
    T: Element,
    F: FnMut(&mut ParamSet<T>, SamPass) -> Result<f64>,
{
    state.check_layout(params)?;
    params.zero_grads();
    let clean = closure(params, SamPass::Clean)?;
    if cfg.gc_enabled {
        centralize_gradients(params)?;
    }

    let mut sq = 0.0f64;
    for e in params.iter() {
        let g = e.tensor.grad().ok_or_else(|| Error::MissingGrad(e.name.clone()))?;
        sq += g.iter().map(|v| v.as_f64().powi(2)).sum::<f64>();
    }
    let norm = sq.sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite(format!("SAM gradient norm is {norm}")));
    }
    if norm == 0.0 {
        if let Some(eps) = &mut state.sam_perturbation {
            eps.iter_mut().for_each(|b| b.fill(T::zero()));
        }
        sgd_step(params, state, lr, cfg)?;
        return Ok((clean, clean));
    }

    let scale = cfg.rho / norm;
    let saved = params.values();
    let mut eps_buf = state
        .sam_perturbation
        .take()
        .unwrap_or_else(|| saved.iter().map(|w| vec![T::zero(); w.len()]).collect());
    for (e, eps) in params.entries_mut().iter_mut().zip(&mut eps_buf) {
        let g = e.tensor.grad().expect("checked above").to_vec();
        let w = e.tensor.data_mut();
        for i in 0..w.len() {
            eps[i] = T::of(g[i].as_f64() * scale);
            w[i] = w[i] + eps[i];
        }
    }
    state.sam_perturbation = Some(eps_buf);

    params.zero_grads();
    let perturbed = closure(params, SamPass::Perturbed);
    params.set_values(&saved)?;
    let perturbed = perturbed?;
    if !perturbed.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss at the SAM-perturbed point is {perturbed}"
        )));
    }
    if cfg.gc_enabled {
        centralize_gradients(params)?;
    }
    sgd_step(params, state, lr, cfg)?;
    Ok((clean, perturbed))
}
