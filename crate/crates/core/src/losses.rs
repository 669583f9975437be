//! Ranking and identity losses over bi-directional tuple batches.
//!
//! Every tuple contributes one RGB-anchored triplet `(a_rgb, p_ir, n_ir)`
//! and one IR-anchored triplet `(a_ir, p_rgb, n_rgb)`. Both directions are
//! averaged over the same batch size `N`.
//!
//! Each loss exists in two forms: a graph builder working on `N x K`
//! embedding nodes (used by training and gradient checks) and a value-level
//! wrapper over a [`TupleBatch`].

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::metric::EmbeddingVector;

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;
pub const DEFAULT_EXPAT_MARGIN: f64 = 1.0;
pub const DEFAULT_LABEL_SMOOTHING: f64 = 0.1;

/// Ranking term of the hybrid objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingLoss {
    /// No ranking term (identity loss only).
    None,
    /// Euclidean bi-directional triplet.
    Triplet,
    /// Hinged cosine triplet.
    CosineTriplet,
    /// Angular triplet with the negative correlation clamped at zero.
    At,
    /// Exponential angular triplet.
    Expat,
    /// Bi-directional (2+1)-tuplet on raw dot products.
    Tuplet21,
}

impl RankingLoss {
    pub fn name(self) -> &'static str {
        match self {
            RankingLoss::None => "none",
            RankingLoss::Triplet => "triplet",
            RankingLoss::CosineTriplet => "cosine_triplet",
            RankingLoss::At => "at",
            RankingLoss::Expat => "expat",
            RankingLoss::Tuplet21 => "tuplet21",
        }
    }

    pub fn default_margin(self) -> f64 {
        match self {
            RankingLoss::Expat => DEFAULT_EXPAT_MARGIN,
            _ => DEFAULT_TRIPLET_MARGIN,
        }
    }

    pub const ALL: [RankingLoss; 6] = [
        RankingLoss::None,
        RankingLoss::Triplet,
        RankingLoss::CosineTriplet,
        RankingLoss::At,
        RankingLoss::Expat,
        RankingLoss::Tuplet21,
    ];
}

impl std::str::FromStr for RankingLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RankingLoss::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ranking loss `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub ranking: RankingLoss,
    /// Hinge margin for the triplet variants, additive exponent offset for
    /// expAT. `None` picks the variant default.
    pub margin: Option<f64>,
    /// Weight of the RGB-anchored expAT term.
    pub alpha: f64,
    /// Weight of the IR-anchored expAT term.
    pub beta: f64,
    pub label_smoothing: f64,
    /// Adds the identity (classification) term.
    pub identity: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ranking: RankingLoss::Expat,
            margin: None,
            alpha: 1.0,
            beta: 1.0,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            identity: true,
        }
    }
}

impl LossConfig {
    pub fn with_ranking(ranking: RankingLoss) -> Self {
        Self {
            ranking,
            ..Self::default()
        }
    }

    pub fn effective_margin(&self) -> f64 {
        self.margin.unwrap_or_else(|| self.ranking.default_margin())
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let margin = self.effective_margin();
        if !margin.is_finite() || margin < 0.0 {
            problems.push(format!(
                "loss.margin must be a finite value >= 0, got {margin}"
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            problems.push(format!("loss.alpha must be >= 0, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            problems.push(format!("loss.beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            problems.push(format!(
                "loss.label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            ));
        }
        if self.ranking == RankingLoss::None && !self.identity {
            problems
                .push("loss: no ranking term and identity disabled leaves nothing to train".into());
        }
        problems
    }
}

/// One bi-directional tuple at embedding level.
#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub anchor_rgb: EmbeddingVector,
    pub anchor_ir: EmbeddingVector,
    pub pos_rgb: EmbeddingVector,
    pub pos_ir: EmbeddingVector,
    pub neg_rgb: EmbeddingVector,
    pub neg_ir: EmbeddingVector,
    pub anchor_id: usize,
    pub neg_rgb_id: usize,
    pub neg_ir_id: usize,
}

impl Tuple {
    fn members(&self) -> [&EmbeddingVector; 6] {
        [
            &self.anchor_rgb,
            &self.anchor_ir,
            &self.pos_rgb,
            &self.pos_ir,
            &self.neg_rgb,
            &self.neg_ir,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TupleBatch {
    tuples: Vec<Tuple>,
    dim: usize,
}

impl TupleBatch {
    pub fn new(tuples: Vec<Tuple>) -> Result<Self> {
        let first = tuples.first().ok_or(Error::EmptyBatch)?;
        let dim = first.anchor_rgb.dim();
        for (i, t) in tuples.iter().enumerate() {
            if let Some(v) = t.members().iter().find(|v| v.dim() != dim) {
                return Err(Error::DimensionMismatch {
                    op: "tuple_batch",
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if t.neg_rgb_id == t.anchor_id || t.neg_ir_id == t.anchor_id {
                return Err(Error::invalid(format!(
                    "tuple {i}: negative identity equals anchor identity {}",
                    t.anchor_id
                )));
            }
        }
        Ok(Self { tuples, dim })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    pub fn anchor_ids(&self) -> Vec<usize> {
        self.tuples.iter().map(|t| t.anchor_id).collect()
    }

    /// Role matrices in the order of [`TupleVars`] fields.
    pub fn role_tensors(&self) -> [Tensor; 6] {
        let stack = |f: fn(&Tuple) -> &EmbeddingVector| {
            let rows: Vec<&[f64]> = self.tuples.iter().map(|t| f(t).as_slice()).collect();
            Tensor::from_rows(&rows)
        };
        [
            stack(|t| &t.anchor_rgb),
            stack(|t| &t.anchor_ir),
            stack(|t| &t.pos_rgb),
            stack(|t| &t.pos_ir),
            stack(|t| &t.neg_rgb),
            stack(|t| &t.neg_ir),
        ]
    }

    /// Loads the batch into `graph`, as trainable leaves when `params`.
    pub fn to_graph(&self, graph: &mut Graph, params: bool) -> TupleVars {
        let vars = self.role_tensors().map(|t| {
            if params {
                graph.param(t)
            } else {
                graph.constant(t)
            }
        });
        TupleVars::from_array(vars)
    }
}

/// Graph nodes (`N x K` each) for the six tuple roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TupleVars {
    pub anchor_rgb: Var,
    pub anchor_ir: Var,
    pub pos_rgb: Var,
    pub pos_ir: Var,
    pub neg_rgb: Var,
    pub neg_ir: Var,
}

impl TupleVars {
    pub fn from_array(v: [Var; 6]) -> Self {
        Self {
            anchor_rgb: v[0],
            anchor_ir: v[1],
            pos_rgb: v[2],
            pos_ir: v[3],
            neg_rgb: v[4],
            neg_ir: v[5],
        }
    }

    /// `(anchor, positive, negative)` for the RGB-anchored then IR-anchored
    /// direction.
    pub fn directions(&self) -> [(Var, Var, Var); 2] {
        [
            (self.anchor_rgb, self.pos_ir, self.neg_ir),
            (self.anchor_ir, self.pos_rgb, self.neg_rgb),
        ]
    }
}

fn check_margin(margin: f64) -> Result<()> {
    if margin.is_finite() && margin >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "margin must be finite and >= 0, got {margin}"
        )))
    }
}

fn check_finite(g: &Graph, v: Var) -> Result<Var> {
    if g.value(v).is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            op: g.first_non_finite().unwrap_or("loss"),
        })
    }
}

fn sum_directions(
    g: &mut Graph,
    t: &TupleVars,
    mut per_direction: impl FnMut(&mut Graph, Var, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let [(a1, p1, n1), (a2, p2, n2)] = t.directions();
    let l1 = per_direction(g, a1, p1, n1)?;
    let l2 = per_direction(g, a2, p2, n2)?;
    let total = g.add(l1, l2)?;
    check_finite(g, total)
}

pub fn bidirectional_triplet_graph(g: &mut Graph, t: &TupleVars, margin: f64) -> Result<Var> {
    check_margin(margin)?;
    sum_directions(g, t, |g, a, p, n| {
        let dap = g.sub(a, p)?;
        let dap = g.norm2(dap);
        let dan = g.sub(a, n)?;
        let dan = g.norm2(dan);
        let diff = g.sub(dap, dan)?;
        let shifted = g.add_scalar(diff, margin);
        let hinge = g.clamp_min0(shifted);
        g.mean(hinge)
    })
}

pub fn cosine_triplet_graph(g: &mut Graph, t: &TupleVars, margin: f64) -> Result<Var> {
    check_margin(margin)?;
    sum_directions(g, t, |g, a, p, n| {
        let cap = g.cosine(a, p)?;
        let can = g.cosine(a, n)?;
        let diff = g.sub(can, cap)?;
        let shifted = g.add_scalar(diff, margin);
        let hinge = g.clamp_min0(shifted);
        g.mean(hinge)
    })
}

/// `[cos(a, n)]_+ - cos(a, p) + offset`, one row per tuple.
fn angular_exponent(g: &mut Graph, a: Var, p: Var, n: Var, offset: f64) -> Result<Var> {
    let cap = g.cosine(a, p)?;
    let can = g.cosine(a, n)?;
    let can = g.clamp_min0(can);
    let diff = g.sub(can, cap)?;
    Ok(g.add_scalar(diff, offset))
}

pub fn at_loss_graph(g: &mut Graph, t: &TupleVars) -> Result<Var> {
    sum_directions(g, t, |g, a, p, n| {
        let e = angular_exponent(g, a, p, n, 1.0)?;
        g.mean(e)
    })
}

pub fn expat_loss_graph(
    g: &mut Graph,
    t: &TupleVars,
    alpha: f64,
    beta: f64,
    margin: f64,
) -> Result<Var> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid(format!(
            "expAT weights must be >= 0, got alpha={alpha}, beta={beta}"
        )));
    }
    if !margin.is_finite() {
        return Err(Error::NonFinite {
            op: "expat exponent",
        });
    }
    let weights = [alpha, beta];
    let mut dir = 0;
    sum_directions(g, t, |g, a, p, n| {
        let e = angular_exponent(g, a, p, n, margin)?;
        let e = g.exp(e);
        let m = g.mean(e)?;
        let w = weights[dir];
        dir += 1;
        Ok(g.scale(m, w))
    })
}

/// Mean over tuples and both directions of `log(1 + e^{a.n - a.p})`.
pub fn tuplet21_loss_graph(g: &mut Graph, t: &TupleVars) -> Result<Var> {
    let total = sum_directions(g, t, |g, a, p, n| {
        let an = g.dot(a, n)?;
        let ap = g.dot(a, p)?;
        let diff = g.sub(an, ap)?;
        let sp = g.softplus(diff);
        g.mean(sp)
    })?;
    Ok(g.scale(total, 0.5))
}

/// Ranking term selected by `cfg`; `None` for identity-only training.
pub fn ranking_loss_graph(g: &mut Graph, t: &TupleVars, cfg: &LossConfig) -> Result<Option<Var>> {
    let margin = cfg.effective_margin();
    let v = match cfg.ranking {
        RankingLoss::None => return Ok(None),
        RankingLoss::Triplet => bidirectional_triplet_graph(g, t, margin)?,
        RankingLoss::CosineTriplet => cosine_triplet_graph(g, t, margin)?,
        RankingLoss::At => at_loss_graph(g, t)?,
        RankingLoss::Expat => expat_loss_graph(g, t, cfg.alpha, cfg.beta, margin)?,
        RankingLoss::Tuplet21 => tuplet21_loss_graph(g, t)?,
    };
    Ok(Some(v))
}

/// Label-smoothed targets `q_i = (1 - eps) [i = y] + eps / C`, one row per label.
pub fn smoothed_targets(labels: &[usize], classes: usize, eps: f64) -> Result<Tensor> {
    if classes < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid(format!(
            "label smoothing must lie in [0, 1), got {eps}"
        )));
    }
    let mut q = Tensor::filled(labels.len(), classes, eps / classes as f64);
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::invalid(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        q.data_mut()[r * classes + y] += 1.0 - eps;
    }
    Ok(q)
}

/// Batch mean of `CE(logits_rgb) + CE(logits_ir)` against smoothed targets.
pub fn identity_loss_graph(
    g: &mut Graph,
    logits_rgb: Var,
    logits_ir: Var,
    labels: &[usize],
    eps: f64,
) -> Result<Var> {
    let (rows, classes) = g.shape(logits_rgb);
    if g.shape(logits_ir) != (rows, classes) {
        return Err(Error::ShapeMismatch {
            op: "identity_loss",
            lhs: (rows, classes),
            rhs: g.shape(logits_ir),
        });
    }
    if labels.len() != rows {
        return Err(Error::DimensionMismatch {
            op: "identity_loss",
            expected: rows,
            actual: labels.len(),
        });
    }
    let q = smoothed_targets(labels, classes, eps)?;
    let ce_rgb = g.softmax_cross_entropy(logits_rgb, q.clone())?;
    let ce_ir = g.softmax_cross_entropy(logits_ir, q)?;
    let both = g.add(ce_rgb, ce_ir)?;
    let m = g.mean(both)?;
    check_finite(g, m)
}

/// Loss values reported per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ranking: f64,
    pub identity: f64,
}

/// Graph nodes of the hybrid objective.
#[derive(Debug, Clone, Copy)]
pub struct HybridVars {
    pub total: Var,
    pub ranking: Option<Var>,
    pub identity: Option<Var>,
}

impl HybridVars {
    pub fn parts(&self, g: &Graph) -> LossParts {
        let val = |v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
        LossParts {
            total: g.value(self.total).item(),
            ranking: val(self.ranking),
            identity: val(self.identity),
        }
    }
}

/// Unweighted sum of the selected ranking term and the identity term.
pub fn hybrid_loss_graph(
    g: &mut Graph,
    t: &TupleVars,
    logits: Option<(Var, Var)>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<HybridVars> {
    let ranking = ranking_loss_graph(g, t, cfg)?;
    let identity = if cfg.identity {
        let (lr, li) = logits.ok_or_else(|| Error::invalid("identity loss requires logits"))?;
        Some(identity_loss_graph(g, lr, li, labels, cfg.label_smoothing)?)
    } else {
        None
    };
    let total = match (ranking, identity) {
        (Some(r), Some(i)) => g.add(r, i)?,
        (Some(r), None) => r,
        (None, Some(i)) => i,
        (None, None) => return Err(Error::invalid("hybrid loss has no active component")),
    };
    Ok(HybridVars {
        total,
        ranking,
        identity,
    })
}

fn eval_on_batch(
    batch: &TupleBatch,
    f: impl FnOnce(&mut Graph, &TupleVars) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let t = batch.to_graph(&mut g, false);
    let out = f(&mut g, &t)?;
    Ok(g.value(out).item())
}

pub fn bidirectional_triplet(batch: &TupleBatch, margin: f64) -> Result<f64> {
    eval_on_batch(batch, |g, t| bidirectional_triplet_graph(g, t, margin))
}

pub fn cosine_triplet(batch: &TupleBatch, margin: f64) -> Result<f64> {
    eval_on_batch(batch, |g, t| cosine_triplet_graph(g, t, margin))
}

pub fn at_loss(batch: &TupleBatch) -> Result<f64> {
    eval_on_batch(batch, at_loss_graph)
}

pub fn expat_loss(batch: &TupleBatch, alpha: f64, beta: f64, margin: f64) -> Result<f64> {
    eval_on_batch(batch, |g, t| expat_loss_graph(g, t, alpha, beta, margin))
}

pub fn tuplet21_loss(batch: &TupleBatch) -> Result<f64> {
    eval_on_batch(batch, tuplet21_loss_graph)
}

/// Ranking loss value for `cfg`, `0.0` when no ranking term is selected.
pub fn ranking_loss(batch: &TupleBatch, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let t = batch.to_graph(&mut g, false);
    Ok(ranking_loss_graph(&mut g, &t, cfg)?.map_or(0.0, |v| g.value(v).item()))
}

/// `-sum_i q_i (log p_i^rgb + log p_i^ir)` for one anchor pair.
pub fn identity_loss(logits_rgb: &[f64], logits_ir: &[f64], label: usize, eps: f64) -> Result<f64> {
    if logits_rgb.len() != logits_ir.len() {
        return Err(Error::DimensionMismatch {
            op: "identity_loss",
            expected: logits_rgb.len(),
            actual: logits_ir.len(),
        });
    }
    let mut g = Graph::new();
    let lr = g.constant(Tensor::row(logits_rgb.to_vec()));
    let li = g.constant(Tensor::row(logits_ir.to_vec()));
    let v = identity_loss_graph(&mut g, lr, li, &[label], eps)?;
    Ok(g.value(v).item())
}

/// Hybrid loss with per-tuple anchor logits `(rgb, ir)`, labelled by the
/// batch's anchor identities.
pub fn hybrid_loss(
    batch: &TupleBatch,
    logits: &[(Vec<f64>, Vec<f64>)],
    cfg: &LossConfig,
) -> Result<LossParts> {
    if cfg.identity && logits.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            op: "hybrid_loss",
            expected: batch.len(),
            actual: logits.len(),
        });
    }
    let mut g = Graph::new();
    let t = batch.to_graph(&mut g, false);
    let logit_vars = if cfg.identity {
        let rgb: Vec<&[f64]> = logits.iter().map(|(r, _)| r.as_slice()).collect();
        let ir: Vec<&[f64]> = logits.iter().map(|(_, i)| i.as_slice()).collect();
        let lr = g.constant(Tensor::from_rows(&rgb));
        let li = g.constant(Tensor::from_rows(&ir));
        Some((lr, li))
    } else {
        None
    };
    let h = hybrid_loss_graph(&mut g, &t, logit_vars, &batch.anchor_ids(), cfg)?;
    Ok(h.parts(&g))
}
