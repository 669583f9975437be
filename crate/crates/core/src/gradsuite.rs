//! Finite-difference sweep over every differentiable component.
//!
//! Each variant builds a small random problem from a seed and compares the
//! analytic gradient with central differences. Reports keep the worst error
//! per variant across all seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::csbn::{CsbnState, NormVariant};
use crate::diff::{grad_check_with, GradCheck, GradCheckOptions, Graph, Tensor, Var};
use crate::error::Result;
use crate::losses::{
    at_loss_graph, bidirectional_triplet_graph, cosine_triplet_graph, expat_loss_graph,
    hybrid_loss_graph, identity_loss_graph, tuplet21_loss_graph, LossConfig, RankingLoss,
    TupleVars,
};
use crate::trainer::tiny_model_grad_check;

const TUPLES: usize = 3;
const DIM: usize = 5;
const CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Triplet,
    CosineTriplet,
    At,
    Expat,
    /// expAT with unequal direction weights.
    ExpatWeighted,
    Tuplet21,
    Identity,
    Hybrid,
    Norm(NormVariant),
    Model(NormVariant, RankingLoss),
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        let mut v = vec![
            Variant::Triplet,
            Variant::CosineTriplet,
            Variant::At,
            Variant::Expat,
            Variant::ExpatWeighted,
            Variant::Tuplet21,
            Variant::Identity,
            Variant::Hybrid,
        ];
        v.extend(NormVariant::ALL.into_iter().map(Variant::Norm));
        for norm in [
            NormVariant::Csbn,
            NormVariant::CsbnFull,
            NormVariant::L2norm,
            NormVariant::Off,
        ] {
            v.push(Variant::Model(norm, RankingLoss::Expat));
        }
        v.push(Variant::Model(NormVariant::Csbn, RankingLoss::Triplet));
        v
    }

    pub fn name(&self) -> String {
        match self {
            Variant::Triplet => "loss/triplet".into(),
            Variant::CosineTriplet => "loss/cosine_triplet".into(),
            Variant::At => "loss/at".into(),
            Variant::Expat => "loss/expat".into(),
            Variant::ExpatWeighted => "loss/expat_weighted".into(),
            Variant::Tuplet21 => "loss/tuplet21".into(),
            Variant::Identity => "loss/identity".into(),
            Variant::Hybrid => "loss/hybrid".into(),
            Variant::Norm(n) => format!("norm/{}", n.name()),
            Variant::Model(n, r) => format!("model/{}+{}", r.name(), n.name()),
        }
    }

    pub fn check(&self, seed: u64, opts: GradCheckOptions) -> Result<GradCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match *self {
            Variant::Triplet => tuple_check(&mut rng, opts, |g, t| {
                bidirectional_triplet_graph(g, t, 0.3)
            }),
            Variant::CosineTriplet => {
                tuple_check(&mut rng, opts, |g, t| cosine_triplet_graph(g, t, 0.3))
            }
            Variant::At => tuple_check(&mut rng, opts, at_loss_graph),
            Variant::Expat => {
                tuple_check(&mut rng, opts, |g, t| expat_loss_graph(g, t, 1.0, 1.0, 1.0))
            }
            Variant::ExpatWeighted => {
                tuple_check(&mut rng, opts, |g, t| expat_loss_graph(g, t, 1.5, 0.5, 1.0))
            }
            Variant::Tuplet21 => tuple_check(&mut rng, opts, tuplet21_loss_graph),
            Variant::Identity => {
                let labels = random_labels(&mut rng);
                let params = vec![
                    gaussian(&mut rng, TUPLES, CLASSES),
                    gaussian(&mut rng, TUPLES, CLASSES),
                ];
                grad_check_with(
                    &params,
                    |g, p| identity_loss_graph(g, p[0], p[1], &labels, 0.1),
                    opts,
                )
            }
            Variant::Hybrid => {
                let labels = random_labels(&mut rng);
                let mut params: Vec<Tensor> =
                    (0..6).map(|_| gaussian(&mut rng, TUPLES, DIM)).collect();
                params.push(gaussian(&mut rng, TUPLES, CLASSES));
                params.push(gaussian(&mut rng, TUPLES, CLASSES));
                let cfg = LossConfig::default();
                grad_check_with(
                    &params,
                    |g, p| {
                        let t = tuple_vars(p);
                        Ok(hybrid_loss_graph(g, &t, Some((p[6], p[7])), &labels, &cfg)?.total)
                    },
                    opts,
                )
            }
            Variant::Norm(variant) => {
                let rows = 6 * TUPLES;
                let x = gaussian(&mut rng, rows, DIM);
                let gamma = Tensor::row((0..DIM).map(|_| rng.random_range(0.5..1.5)).collect());
                let beta = Tensor::row((0..DIM).map(|_| rng.random_range(-0.5..0.5)).collect());
                let w = Tensor::from_vec(
                    rows,
                    DIM,
                    (0..rows * DIM)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                );
                let state = CsbnState::new(variant, DIM);
                grad_check_with(
                    &[x, gamma, beta],
                    |g, p| {
                        let mut s = state.clone();
                        let out = s.forward_train_graph(g, p[0], Some(p[1]), Some(p[2]))?;
                        let wv = g.constant(w.clone());
                        let prod = g.mul(out, wv)?;
                        let e = g.exp(prod);
                        Ok(g.sum(e))
                    },
                    opts,
                )
            }
            Variant::Model(norm, ranking) => {
                tiny_model_grad_check(seed, norm, &LossConfig::with_ranking(ranking), opts)
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    )
}

fn random_labels(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..TUPLES).map(|_| rng.random_range(0..CLASSES)).collect()
}

fn tuple_vars(p: &[Var]) -> TupleVars {
    TupleVars::from_array([p[0], p[1], p[2], p[3], p[4], p[5]])
}

fn tuple_check(
    rng: &mut ChaCha8Rng,
    opts: GradCheckOptions,
    f: impl Fn(&mut Graph, &TupleVars) -> Result<Var>,
) -> Result<GradCheck> {
    let params: Vec<Tensor> = (0..6).map(|_| gaussian(rng, TUPLES, DIM)).collect();
    grad_check_with(&params, |g, p| f(g, &tuple_vars(p)), opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantReport {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub checks: usize,
}

/// Runs every variant for each seed and keeps the worst error per variant.
pub fn run_suite(
    seeds: impl IntoIterator<Item = u64> + Clone,
    opts: GradCheckOptions,
) -> Result<Vec<VariantReport>> {
    Variant::all()
        .into_iter()
        .map(|variant| {
            let mut report = VariantReport {
                name: variant.name(),
                max_rel_error: 0.0,
                worst_seed: 0,
                checks: 0,
            };
            for seed in seeds.clone() {
                let r = variant.check(seed, opts)?;
                if r.max_rel_error > report.max_rel_error || report.checks == 0 {
                    report.max_rel_error = r.max_rel_error;
                    report.worst_seed = seed;
                }
                report.checks += 1;
            }
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_agrees_on_a_few_seeds() {
        for r in run_suite(0..3, GradCheckOptions::default()).unwrap() {
            assert!(r.max_rel_error < 1e-4, "{r:?}");
            assert_eq!(r.checks, 3);
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let opts = GradCheckOptions {
            flip_analytic_sign: true,
            ..Default::default()
        };
        for r in run_suite(0..2, opts).unwrap() {
            assert!(r.max_rel_error > 1e-2, "{r:?}");
        }
    }

    #[test]
    fn names_are_unique() {
        let mut names: Vec<String> = Variant::all().iter().map(Variant::name).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }
}
