//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Step is `rel_step * max(1, |theta|)`.
    pub rel_step: f64,
    /// Negates the analytic gradient; negative control for harnesses.
    pub flip_analytic_sign: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            rel_step: 1e-6,
            flip_analytic_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |numeric|)` over all parameters.
    pub max_rel_error: f64,
    /// `(parameter index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub value: f64,
    pub parameter_count: usize,
}

fn eval_scalar<F>(params: &[Tensor], f: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let t = g.value(out);
    if t.shape() != (1, 1) {
        return Err(Error::ShapeMismatch {
            op: "grad_check",
            lhs: t.shape(),
            rhs: (1, 1),
        });
    }
    if !t.item().is_finite() {
        return Err(Error::NonFinite {
            op: g.first_non_finite().unwrap_or("output"),
        });
    }
    Ok((g, vars, out))
}

pub fn grad_check<F>(params: &[Tensor], f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check_with(params, f, GradCheckOptions::default())
}

pub fn grad_check_with<F>(params: &[Tensor], f: F, opts: GradCheckOptions) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let (g, vars, out) = eval_scalar(params, &f)?;
    let value = g.value(out).item();
    let grads = g.backward(out)?;
    let sign = if opts.flip_analytic_sign { -1.0 } else { 1.0 };

    let mut perturbed = params.to_vec();
    let mut worst = (0, 0);
    let mut max_rel_error = 0.0f64;
    let mut count = 0;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for ei in 0..params[pi].len() {
            let theta = params[pi].data()[ei];
            let h = opts.rel_step * theta.abs().max(1.0);
            perturbed[pi].data_mut()[ei] = theta + h;
            let plus = eval_scalar(&perturbed, &f)?;
            let fp = plus.0.value(plus.2).item();
            perturbed[pi].data_mut()[ei] = theta - h;
            let minus = eval_scalar(&perturbed, &f)?;
            let fm = minus.0.value(minus.2).item();
            perturbed[pi].data_mut()[ei] = theta;

            let numeric = (fp - fm) / (2.0 * h);
            let err = (sign * analytic.data()[ei] - numeric).abs() / numeric.abs().max(1.0);
            if count == 0 || err > max_rel_error {
                max_rel_error = err;
                worst = (pi, ei);
            }
            count += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error,
        worst,
        value,
        parameter_count: count,
    })
}
