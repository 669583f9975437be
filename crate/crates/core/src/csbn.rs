//! Common-space batch normalization.
//!
//! Per-channel batch normalization of the shared embedding with a trainable
//! scale and no shift. The shifted full-BN, the parameter-free variant, L2
//! normalization and a pass-through are selectable for ablations.
//!
//! Batch and running statistics both use the population (1/N) variance.

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    /// Trainable scale, no shift.
    Csbn,
    /// Trainable scale and shift.
    CsbnFull,
    /// Normalization only.
    CsbnNone,
    /// Row-wise L2 normalization.
    L2norm,
    /// Identity.
    Off,
}

impl NormVariant {
    pub const ALL: [NormVariant; 5] = [
        NormVariant::Csbn,
        NormVariant::CsbnFull,
        NormVariant::CsbnNone,
        NormVariant::L2norm,
        NormVariant::Off,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NormVariant::Csbn => "csbn",
            NormVariant::CsbnFull => "csbn_full",
            NormVariant::CsbnNone => "csbn_none",
            NormVariant::L2norm => "l2norm",
            NormVariant::Off => "off",
        }
    }

    pub fn uses_batch_stats(self) -> bool {
        matches!(
            self,
            NormVariant::Csbn | NormVariant::CsbnFull | NormVariant::CsbnNone
        )
    }

    pub fn has_scale(self) -> bool {
        matches!(self, NormVariant::Csbn | NormVariant::CsbnFull)
    }

    pub fn has_shift(self) -> bool {
        self == NormVariant::CsbnFull
    }
}

impl std::str::FromStr for NormVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NormVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown normalization variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsbnState {
    pub variant: NormVariant,
    /// `1 x K` per-channel scale.
    pub gamma: Tensor,
    /// `1 x K` shift; only trained for [`NormVariant::CsbnFull`].
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
    /// Number of train-mode batches folded into the running statistics.
    pub updates: u64,
}

impl CsbnState {
    pub fn new(variant: NormVariant, channels: usize) -> Self {
        Self {
            variant,
            gamma: Tensor::filled(1, channels, 1.0),
            beta: Tensor::zeros(1, channels),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            mode: Mode::Train,
            updates: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn train(&mut self) {
        self.mode = Mode::Train;
    }

    pub fn eval(&mut self) {
        self.mode = Mode::Eval;
    }

    fn check_channels(&self, op: &'static str, k: usize) -> Result<()> {
        if k != self.channels() {
            return Err(Error::DimensionMismatch {
                op,
                expected: self.channels(),
                actual: k,
            });
        }
        Ok(())
    }

    /// Train-mode forward of an `N x K` batch node. Gradients flow through
    /// the batch statistics; running statistics are updated from values.
    /// `gamma` / `beta` are the graph leaves holding the trainable
    /// parameters when the variant has them.
    pub fn forward_train_graph(
        &mut self,
        g: &mut Graph,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
    ) -> Result<Var> {
        if self.mode != Mode::Train {
            return Err(Error::InvalidState(
                "csbn train forward called in eval mode".into(),
            ));
        }
        let (n, k) = g.shape(x);
        self.check_channels("csbn_forward_train", k)?;
        match self.variant {
            NormVariant::Off => return Ok(x),
            NormVariant::L2norm => {
                let norms = g.norm2(x);
                if g.value(norms).data().contains(&0.0) {
                    return Err(Error::DegenerateVector { op: "l2norm" });
                }
                return g.div(x, norms);
            }
            _ => {}
        }
        if n < 2 {
            return Err(Error::invalid(format!(
                "csbn train mode needs a batch of at least 2, got {n}"
            )));
        }
        let mean = g.mean_rows(x)?;
        let centered = g.sub(x, mean)?;
        let sq = g.square(centered);
        let var = g.mean_rows(sq)?;
        let shifted = g.add_scalar(var, self.epsilon);
        let std = g.sqrt(shifted)?;
        let mut out = g.div(centered, std)?;

        if self.variant.has_scale() {
            let gamma = gamma.ok_or_else(|| Error::invalid("csbn variant needs a gamma leaf"))?;
            out = g.mul(out, gamma)?;
        }
        if self.variant.has_shift() {
            let beta = beta.ok_or_else(|| Error::invalid("csbn_full variant needs a beta leaf"))?;
            out = g.add(out, beta)?;
        }

        let m = self.momentum;
        let (bm, bv) = (g.value(mean).data().to_vec(), g.value(var).data().to_vec());
        for c in 0..k {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * bm[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * bv[c];
        }
        self.updates += 1;
        Ok(out)
    }

    /// Train-mode forward on values, with the state's own `gamma`/`beta`.
    pub fn forward_train(&mut self, batch: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let gamma = g.constant(self.gamma.clone());
        let beta = g.constant(self.beta.clone());
        let out = self.forward_train_graph(&mut g, x, Some(gamma), Some(beta))?;
        Ok(g.value(out).clone())
    }

    /// Eval-mode forward of a single embedding using running statistics.
    pub fn forward_eval(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.mode != Mode::Eval {
            return Err(Error::InvalidState(
                "csbn eval forward called in train mode".into(),
            ));
        }
        self.check_channels("csbn_forward_eval", v.len())?;
        match self.variant {
            NormVariant::Off => Ok(v.to_vec()),
            NormVariant::L2norm => {
                let n = crate::metric::norm(v);
                if n == 0.0 {
                    return Err(Error::DegenerateVector { op: "l2norm" });
                }
                Ok(v.iter().map(|x| x / n).collect())
            }
            variant => {
                if self.updates == 0 {
                    return Err(Error::InvalidState(
                        "csbn running statistics were never populated by a train step".into(),
                    ));
                }
                Ok((0..v.len())
                    .map(|c| {
                        let std = (self.running_var[c] + self.epsilon).sqrt();
                        let factor = if variant.has_scale() {
                            self.gamma.data()[c] / std
                        } else {
                            1.0 / std
                        };
                        let mut out = factor * (v[c] - self.running_mean[c]);
                        if variant.has_shift() {
                            out += self.beta.data()[c];
                        }
                        out
                    })
                    .collect())
            }
        }
    }
}
