//! Weight-shared encoder, common-space normalization and classifier head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::csbn::{CsbnState, NormVariant};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{identity_loss_graph, ranking_loss_graph, HybridVars, LossConfig, TupleVars};
use crate::metric::EmbeddingVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub norm: NormVariant,
}

/// Parameter names in storage order.
pub const PARAM_NAMES: [&str; 7] = [
    "encoder.w1",
    "encoder.b1",
    "encoder.w2",
    "encoder.b2",
    "classifier.w",
    "csbn.gamma",
    "csbn.beta",
];

/// `affine(D->H) + relu + affine(H->K)`, then normalization; the same
/// parameters embed both modalities. The classifier is `C x K` without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub classifier: Tensor,
    pub csbn: CsbnState,
}

/// Graph leaves of every model parameter.
#[derive(Debug, Clone, Copy)]
pub struct ModelVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub classifier: Var,
    pub gamma: Var,
    pub beta: Var,
}

impl ModelVars {
    pub fn as_array(&self) -> [Var; 7] {
        [
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.classifier,
            self.gamma,
            self.beta,
        ]
    }

    fn from_slice(v: &[Var]) -> Self {
        Self {
            w1: v[0],
            b1: v[1],
            w2: v[2],
            b2: v[3],
            classifier: v[4],
            gamma: v[5],
            beta: v[6],
        }
    }
}

fn kaiming(rng: &mut impl Rng, rows: usize, fan_in: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_vec(
        rows,
        fan_in,
        (0..rows * fan_in).map(|_| normal.sample(rng)).collect(),
    )
}

impl Model {
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let ModelConfig {
            input_dim: d,
            hidden: h,
            embed_dim: k,
            classes: c,
            norm,
        } = config;
        if d == 0 || h == 0 || k == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if c < 2 {
            return Err(Error::invalid(format!(
                "classifier needs at least 2 classes, got {c}"
            )));
        }
        Ok(Self {
            config,
            w1: kaiming(rng, h, d),
            b1: Tensor::zeros(1, h),
            w2: kaiming(rng, k, h),
            b2: Tensor::zeros(1, k),
            classifier: kaiming(rng, c, k),
            csbn: CsbnState::new(norm, k),
        })
    }

    pub fn params(&self) -> [&Tensor; 7] {
        [
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.classifier,
            &self.csbn.gamma,
            &self.csbn.beta,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 7] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.classifier,
            &mut self.csbn.gamma,
            &mut self.csbn.beta,
        ]
    }

    /// Which of [`Model::params`] the optimizer updates.
    pub fn trainable(&self) -> [bool; 7] {
        let v = self.config.norm;
        [true, true, true, true, true, v.has_scale(), v.has_shift()]
    }

    pub fn leaves(&self, g: &mut Graph) -> ModelVars {
        let vars: Vec<Var> = self
            .params()
            .iter()
            .map(|p| g.param((*p).clone()))
            .collect();
        ModelVars::from_slice(&vars)
    }

    /// Encoder output before normalization.
    pub fn encode_graph(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        let (_, d) = g.shape(x);
        if d != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                op: "encoder",
                expected: self.config.input_dim,
                actual: d,
            });
        }
        let h = g.affine(vars.w1, vars.b1, x)?;
        let h = g.relu(h);
        g.affine(vars.w2, vars.b2, h)
    }

    /// Train-mode embedding of an `R x D` batch; updates running statistics.
    pub fn embed_train_graph(&mut self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<Var> {
        let e = self.encode_graph(g, vars, x)?;
        self.csbn
            .forward_train_graph(g, e, Some(vars.gamma), Some(vars.beta))
    }

    /// Hybrid loss of a batch laid out as six `N`-row blocks
    /// `[a_rgb, a_ir, p_rgb, p_ir, n_rgb, n_ir]`. Normalization statistics
    /// are taken over all `6N` rows. `labels` are the anchors' class
    /// indices. The identity term uses the anchor embeddings.
    pub fn batch_loss_graph(
        &mut self,
        g: &mut Graph,
        vars: &ModelVars,
        x: Tensor,
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<BatchLoss> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.rows() != 6 * n {
            return Err(Error::DimensionMismatch {
                op: "batch_loss",
                expected: 6 * n,
                actual: x.rows(),
            });
        }
        let xv = g.constant(x);
        let e = self.embed_train_graph(g, vars, xv)?;
        let mut roles = [e; 6];
        for (r, slot) in roles.iter_mut().enumerate() {
            let rows: Vec<usize> = (r * n..(r + 1) * n).collect();
            *slot = g.select_rows(e, &rows)?;
        }
        let t = TupleVars::from_array(roles);

        let ranking = ranking_loss_graph(g, &t, loss);
        let identity = if loss.identity {
            let lr = g.matvec(vars.classifier, t.anchor_rgb)?;
            let li = g.matvec(vars.classifier, t.anchor_ir)?;
            Some(identity_loss_graph(g, lr, li, labels, loss.label_smoothing))
        } else {
            None
        };
        BatchLoss::assemble(g, ranking, identity)
    }

    pub fn eval(&mut self) {
        self.csbn.eval();
    }

    pub fn train(&mut self) {
        self.csbn.train();
    }

    /// Eval-mode embedding of one raw feature vector. Modality does not
    /// enter: both modalities share every parameter.
    pub fn embed(&self, features: &[f64]) -> Result<EmbeddingVector> {
        let rows = self.embed_batch(&[features])?;
        EmbeddingVector::new(rows.into_iter().next().expect("one row"))
    }

    /// Eval-mode embeddings of many raw feature vectors.
    pub fn embed_batch(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let d = self.config.input_dim;
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                op: "embed",
                expected: d,
                actual: r.len(),
            });
        }
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        let x = Tensor::from_rows(rows);
        let mut h = x.matmul_t(&self.w1);
        add_bias_relu(&mut h, &self.b1, true);
        let mut e = h.matmul_t(&self.w2);
        add_bias_relu(&mut e, &self.b2, false);
        (0..e.rows())
            .map(|r| self.csbn.forward_eval(e.row_slice(r)))
            .collect()
    }
}

fn add_bias_relu(m: &mut Tensor, b: &Tensor, relu: bool) {
    let cols = m.cols();
    for (i, v) in m.data_mut().iter_mut().enumerate() {
        *v += b.data()[i % cols];
        if relu && *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Loss nodes of one training batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub vars: HybridVars,
}

impl BatchLoss {
    fn assemble(
        g: &mut Graph,
        ranking: Result<Option<Var>>,
        identity: Option<Result<Var>>,
    ) -> Result<Self> {
        let non_finite = |r: &Result<Option<Var>>, i: &Option<Result<Var>>| {
            matches!(r, Err(Error::NonFinite { .. }))
                || matches!(i, Some(Err(Error::NonFinite { .. })))
        };
        if non_finite(&ranking, &identity) {
            let value = |v: Option<&Var>| v.map_or(0.0, |v| g.value(*v).item());
            let ranking = match &ranking {
                Ok(v) => value(v.as_ref()),
                Err(_) => f64::NAN,
            };
            let identity = match &identity {
                None => 0.0,
                Some(Ok(v)) => value(Some(v)),
                Some(Err(_)) => f64::NAN,
            };
            // The trainer fills in the step.
            return Err(Error::NonFiniteLoss {
                step: 0,
                total: ranking + identity,
                ranking,
                identity,
            });
        }
        let ranking = ranking?;
        let identity = identity.transpose()?;
        let total = match (ranking, identity) {
            (Some(r), Some(i)) => g.add(r, i)?,
            (Some(r), None) => r,
            (None, Some(i)) => i,
            (None, None) => return Err(Error::invalid("loss has no active component")),
        };
        Ok(Self {
            vars: HybridVars {
                total,
                ranking,
                identity,
            },
        })
    }
}

/// Loss of a tiny model as a closure over all parameters, for gradient
/// checks of the whole pipeline.
pub fn model_loss_fn<'a>(
    model: &'a Model,
    x: &'a Tensor,
    labels: &'a [usize],
    loss: &'a LossConfig,
) -> impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'a {
    move |g, p| {
        let mut m = model.clone();
        let vars = ModelVars::from_slice(p);
        Ok(m.batch_loss_graph(g, &vars, x.clone(), labels, loss)?
            .vars
            .total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::grad_check;
    use crate::losses::RankingLoss;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(norm: NormVariant, seed: u64) -> (Model, Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig {
            input_dim: 8,
            hidden: 8,
            embed_dim: 4,
            classes: 3,
            norm,
        };
        let mut model = Model::init(cfg, &mut rng).unwrap();
        model.csbn.gamma =
            Tensor::from_vec(1, 4, (0..4).map(|_| rng.random_range(0.5..1.5)).collect());
        let x = Tensor::from_vec(
            12,
            8,
            (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        (model, x, vec![0, 2])
    }

    #[test]
    fn end_to_end_gradients() {
        for norm in [
            NormVariant::Csbn,
            NormVariant::CsbnFull,
            NormVariant::L2norm,
            NormVariant::Off,
        ] {
            for ranking in [RankingLoss::Expat, RankingLoss::Triplet] {
                let (model, x, labels) = tiny(norm, 11);
                let loss = LossConfig::with_ranking(ranking);
                let params: Vec<Tensor> = model.params().iter().map(|p| (*p).clone()).collect();
                let r = grad_check(&params, model_loss_fn(&model, &x, &labels, &loss)).unwrap();
                assert!(r.max_rel_error < 1e-4, "{norm:?} {ranking:?}: {r:?}");
            }
        }
    }

    #[test]
    fn modalities_share_the_encoder() {
        let (mut model, x, labels) = tiny(NormVariant::Csbn, 2);
        let mut g = Graph::new();
        let vars = model.leaves(&mut g);
        model
            .batch_loss_graph(&mut g, &vars, x.clone(), &labels, &LossConfig::default())
            .unwrap();
        model.eval();
        let v = x.row_slice(0);
        // The same vector labelled rgb then ir goes through one code path
        // with one parameter set.
        let as_rgb = model.embed(v).unwrap();
        let as_ir = model.embed_batch(&[x.row_slice(1), v]).unwrap()[1].clone();
        assert_eq!(as_rgb.as_slice(), &as_ir[..]);
    }

    #[test]
    fn eval_matches_graph_encoder() {
        let (model, x, _) = tiny(NormVariant::Off, 4);
        let mut g = Graph::new();
        let vars = model.leaves(&mut g);
        let xv = g.constant(x.clone());
        let e = model.encode_graph(&mut g, &vars, xv).unwrap();
        let mut m = model.clone();
        m.eval();
        let rows: Vec<&[f64]> = (0..x.rows()).map(|r| x.row_slice(r)).collect();
        let direct = m.embed_batch(&rows).unwrap();
        for (r, row) in direct.iter().enumerate() {
            for (a, b) in row.iter().zip(g.value(e).row_slice(r)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_shapes() {
        let (mut model, x, _) = tiny(NormVariant::Csbn, 1);
        let mut g = Graph::new();
        let vars = model.leaves(&mut g);
        assert!(model
            .batch_loss_graph(&mut g, &vars, x, &[0, 1, 2], &LossConfig::default())
            .is_err());
        model.eval();
        assert!(matches!(
            model.embed(&[0.0; 3]),
            Err(Error::DimensionMismatch {
                expected: 8,
                actual: 3,
                ..
            })
        ));
    }
}
