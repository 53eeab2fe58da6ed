//! Central finite differences as an independent gradient oracle.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-4;

/// Denominator floor for the relative error, per unit of objective.
///
/// Central differences carry rounding noise of a few `ε·|f| / h`, which at
/// `h = 1e-5` is about `1e-10·|f|`. Gradients below `REL_ERR_FLOOR·max(1, |f|)`
/// are therefore compared absolutely on that scale; otherwise a coordinate
/// whose true gradient is zero would report pure rounding as error.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    scaled_relative_error(analytic, numeric, 1.0)
}

/// Relative error with the floor scaled by the objective value `f`.
pub fn scaled_relative_error(analytic: f64, numeric: f64, f: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR * f.abs().max(1.0));
    (analytic - numeric).abs() / denom
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub passed: bool,
}

fn central(f_plus: f64, f_minus: f64, h: f64, index: usize) -> Result<f64> {
    if !f_plus.is_finite() || !f_minus.is_finite() {
        return Err(Error::Numeric {
            op: "finite_diff_check",
            index,
            detail: format!("non-finite objective ({f_plus}, {f_minus})"),
        });
    }
    Ok((f_plus - f_minus) / (2.0 * h))
}

fn check_args(h: f64, rel_tol: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::Usage(format!("finite difference step must be positive, got {h}")));
    }
    if !(rel_tol >= 0.0) {
        return Err(Error::Usage(format!("tolerance must be non-negative, got {rel_tol}")));
    }
    Ok(())
}

fn summarize(numeric: Vec<f64>, analytic: &[f64], rel_tol: f64, f0: f64) -> FdReport {
    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = scaled_relative_error(a, n, f0);
        if e > max_rel_err {
            max_rel_err = e;
            worst_index = i;
        }
    }
    // With a zero tolerance the check is meant to fail: differences are never exact.
    let passed = if rel_tol == 0.0 { false } else { max_rel_err <= rel_tol };
    FdReport {
        numeric,
        max_rel_err,
        worst_index,
        passed,
    }
}

/// Compares `analytic` against `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn finite_diff_check<F>(mut f: F, params: &[f64], analytic: &[f64], h: f64, rel_tol: f64) -> Result<FdReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    check_args(h, rel_tol)?;
    if params.len() != analytic.len() {
        return Err(Error::shape("finite_diff_check", &[params.len()], &[analytic.len()]));
    }
    let mut p = params.to_vec();
    let f0 = f(&p)?;
    let mut numeric = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = f(&p)?;
        p[i] = orig - h;
        let fm = f(&p)?;
        p[i] = orig;
        numeric.push(central(fp, fm, h, i)?);
    }
    Ok(summarize(numeric, analytic, rel_tol, f0))
}

/// Finite-difference check of one trainable leaf of a recorded graph.
///
/// Each perturbed objective is obtained by replaying only the operations
/// that depend on `leaf`.
pub fn check_leaf(graph: &Graph, leaf: Var, root: Var, analytic: &Tensor, h: f64, rel_tol: f64) -> Result<FdReport> {
    check_args(h, rel_tol)?;
    let plan = graph.replay_plan(leaf, root)?;
    let base = graph.value(leaf).clone();
    if analytic.shape() != base.shape() {
        return Err(Error::shape("check_leaf", base.shape(), analytic.shape()));
    }
    let f0 = graph.value(root).item()?;
    let mut numeric = Vec::with_capacity(base.numel());
    if !plan.reaches_root() {
        numeric.resize(base.numel(), 0.0);
        return Ok(summarize(numeric, analytic.data(), rel_tol, f0));
    }
    let mut probe = base.clone();
    for i in 0..base.numel() {
        let orig = base.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = graph.replay(&plan, &probe)?.item()?;
        probe.data_mut()[i] = orig - h;
        let fm = graph.replay(&plan, &probe)?.item()?;
        probe.data_mut()[i] = orig;
        numeric.push(central(fp, fm, h, i)?);
    }
    Ok(summarize(numeric, analytic.data(), rel_tol, f0))
}
