//! Bias-corrected ADAM.

use crate::diff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One update of `param` in place. `t` is the 1-based step count used for
/// bias correction.
pub fn adam_step(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    hp: AdamConfig,
) -> Result<()> {
    let n = param.len();
    for (op, len) in [
        ("adam.grad", grad.len()),
        ("adam.m", m.len()),
        ("adam.v", v.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch {
                op,
                expected: n,
                actual: len,
            });
        }
    }
    if t == 0 {
        return Err(Error::invalid("adam step count starts at 1"));
    }
    let c1 = 1.0 - hp.beta1.powi(t as i32);
    let c2 = 1.0 - hp.beta2.powi(t as i32);
    for i in 0..n {
        let g = grad[i];
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

/// Moment buffers for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[(usize, usize)], config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Tensor::zeros(r, c)).collect(),
        }
    }

    /// Updates every parameter flagged in `trainable`. Gradients are checked
    /// for finiteness before anything is modified.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        trainable: &[bool],
        names: &[&str],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                op: "adam",
                expected: self.m.len(),
                actual: params.len().min(grads.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if trainable[i] && !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: names[i].to_string(),
                });
            }
        }
        self.t += 1;
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            adam_step(
                params[i].data_mut(),
                grads[i].data(),
                self.m[i].data_mut(),
                self.v[i].data_mut(),
                self.t,
                lr,
                self.config,
            )?;
        }
        Ok(())
    }
}
