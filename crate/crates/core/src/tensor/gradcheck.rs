//! Central finite-difference oracle for tape gradients.

use super::{Tape, Tensor, Var};
use crate::element::Element;
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)` over checked
    /// coordinates; see [`GradCheckReport::SCALE_FLOOR`].
    pub max_rel_error: f64,
    pub worst_coord: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Denominator floor, relative to the largest gradient magnitude among the
    /// checked coordinates. Coordinates whose derivative is tiny compared with
    /// the rest are judged against this scale rather than their own.
    pub const SCALE_FLOOR: f64 = 1e-3;
    /// Absolute denominator floor for functions whose gradient vanishes.
    pub const ABS_FLOOR: f64 = 1e-10;

    pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
        let diff = (analytic - numeric).abs();
        if diff == 0.0 {
            return 0.0;
        }
        diff / analytic.abs().max(numeric.abs()).max(floor)
    }

    /// Builds a report from `(coordinate, analytic, numeric)` triples.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64, f64)>, tol: f64) -> Self {
        let pairs: Vec<_> = pairs.into_iter().collect();
        let scale = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
        let floor = (Self::SCALE_FLOOR * scale).max(Self::ABS_FLOOR);
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_coord: 0,
            checked: pairs.len(),
            tol,
            passed: true,
        };
        for (coord, a, n) in pairs {
            let err = Self::relative_error(a, n, floor);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_coord = coord;
            }
        }
        report.passed = report.max_rel_error <= tol;
        report
    }
}

fn eval<T: Element, F>(f: &mut F, x: &Tensor<T>) -> Result<f64>
where
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = f(&mut tape, v)?;
    if tape.value(y).len() != 1 {
        return Err(Error::shape("grad_check", "function must be scalar-valued"));
    }
    let out = tape.scalar(y).as_f64();
    if !out.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: f(x) = {out}")));
    }
    Ok(out)
}

/// Checks every coordinate of `x`.
pub fn grad_check<T: Element, F>(f: F, x: &Tensor<T>, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    grad_check_coords(f, x, &coords, step, tol)
}

/// Checks only the listed coordinates of `x`.
pub fn grad_check_coords<T: Element, F>(
    mut f: F,
    x: &Tensor<T>,
    coords: &[usize],
    step: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut leaf = x.clone();
    leaf.requires_grad = true;
    let v = tape.leaf(&leaf);
    let y = f(&mut tape, v)?;
    let y0 = tape.scalar(y).as_f64();
    if !y0.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: f(x) = {y0}")));
    }
    tape.backward(y)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.iter().map(|g| g.as_f64()).collect(),
        None => vec![0.0; x.len()],
    };

    let mut pairs = Vec::with_capacity(coords.len());
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::of(step);
        let plus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig - T::of(step);
        let minus = eval(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        pairs.push((i, analytic[i], (plus - minus) / (2.0 * step)));
    }
    Ok(GradCheckReport::from_pairs(pairs, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_exact_on_dyadic_inputs() {
        let x = Tensor::<f64>::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.0, 5.0, 8.0]).unwrap();
        let r = grad_check(|t, v| Ok(t.sum(v)), &x, 2f64.powi(-10), 0.0).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn celu_passes_tightly() {
        let x = Tensor::<f64>::scalar(-0.3);
        let r = grad_check(
            |t, v| {
                let y = t.celu(v, 0.3)?;
                Ok(t.sum(y))
            },
            &x,
            1e-5,
            1e-6,
        )
        .unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let x = Tensor::<f64>::scalar(1e308);
        let res = grad_check(
            |t, v| {
                let y = t.scale(v, 10.0);
                Ok(t.sum(y))
            },
            &x,
            1e-3,
            1e-6,
        );
        assert!(matches!(res, Err(Error::NonFinite(_))));
    }
}
