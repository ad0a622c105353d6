//! Central finite-difference checks of tape gradients.

use serde::Serialize;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Entries whose analytic and numeric gradients are both below this
/// magnitude are compared on an absolute scale of this size.
pub const DENOMINATOR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR)
}

fn report(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> GradCheckReport {
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        max_rel_error,
        worst_index,
        checked: analytic.len(),
        tol,
        passed: max_rel_error < tol || (max_rel_error == 0.0 && tol == 0.0),
        analytic,
        numeric,
    }
}

fn eval_scalar<'g>(out: Var<'g>) -> Result<f64> {
    let v = out.value();
    if v.len() != 1 {
        return Err(Error::Contract(format!("gradient check needs a scalar function, got {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the tape gradient of scalar `f` at `x` with
/// `(f(x + eps·e) − f(x − eps·e)) / (2·eps)` for every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let xv = g.input(x.clone());
    let out = f(&g, xv)?;
    eval_scalar(out)?;
    let grads = g.backward(out)?;
    let analytic = grads.wrt(xv).map_or_else(|| vec![0.0; x.len()], |t| t.data().to_vec());

    let at = |data: Vec<f64>| -> Result<f64> {
        let g = Graph::new();
        let v = g.input(Tensor::new(x.shape(), data)?);
        eval_scalar(f(&g, v)?)
    };
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.data().to_vec();
        let mut minus = plus.clone();
        plus[i] += eps;
        minus[i] -= eps;
        numeric.push((at(plus)? - at(minus)?) / (2.0 * eps));
    }
    Ok(report(analytic, numeric, tol))
}

/// A single scalar inside a stored parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamEntry {
    pub param: ParamId,
    pub index: usize,
}

/// Finite-difference check of `f` with respect to selected parameter entries.
pub fn grad_check_params<F>(
    f: F,
    store: &ParamStore,
    entries: &[ParamEntry],
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let out = f(&g, store)?;
    eval_scalar(out)?;
    let grads = g.backward(out)?;
    let analytic = entries
        .iter()
        .map(|e| grads.param(e.param).map_or(0.0, |t| t.data()[e.index]))
        .collect();

    let mut scratch = store.clone();
    let mut numeric = Vec::with_capacity(entries.len());
    for e in entries {
        let orig = store.value(e.param).data()[e.index];
        let mut eval_with = |v: f64| -> Result<f64> {
            let mut t = store.value(e.param).clone().into_data();
            t[e.index] = v;
            scratch.set(e.param, Tensor::new(store.value(e.param).shape(), t)?)?;
            let g = Graph::new();
            eval_scalar(f(&g, &scratch)?)
        };
        let hi = eval_with(orig + eps)?;
        let lo = eval_with(orig - eps)?;
        eval_with(orig)?;
        numeric.push((hi - lo) / (2.0 * eps));
    }
    Ok(report(analytic, numeric, tol))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_tight() {
        let x = Tensor::new(&[5], vec![0.3, -1.7, 2.2, 0.01, 4.0]).unwrap();
        let r = grad_check(|_, v| Ok(v.mul(v)?.sum()), &x, 1e-4, 1e-8).unwrap();
        assert!(r.passed, "{}", r.max_rel_error);
    }

    #[test]
    fn constant_function_passes_any_tolerance() {
        let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let r = grad_check(|g, _| Ok(g.constant(Tensor::scalar(4.2))), &x, 1e-4, 0.0).unwrap();
        assert!(r.passed);
        assert!(r.analytic.iter().chain(&r.numeric).all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_function_is_rejected() {
        let x = Tensor::zeros(&[2]);
        assert!(matches!(grad_check(|_, v| Ok(v), &x, 1e-4, 1e-4), Err(Error::Contract(_))));
    }
}
