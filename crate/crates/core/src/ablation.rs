//! Desk-scale ablation runs: train one configuration on synthetic data and
//! collect retrieval, separability and descent statistics.

use crate::csbn::NormVariant;
use crate::data::{generate_split, Dataset, Modality, SyntheticConfig};
use crate::error::{Error, Result};
use crate::eval::{angular_separability, embed_dataset, evaluate_embeddings, EvalConfig};
use crate::losses::{LossConfig, RankingLoss};
use crate::trainer::{train, StepLog, TrainConfig};

/// Steps averaged at each end of the loss log for the descent ratio.
pub const DESCENT_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: &'static str,
    pub ranking: RankingLoss,
    pub norm: NormVariant,
}

impl Arm {
    pub const fn new(name: &'static str, ranking: RankingLoss, norm: NormVariant) -> Self {
        Self {
            name,
            ranking,
            norm,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            norm: self.norm,
            loss: LossConfig::with_ranking(self.ranking),
            seed,
            ..TrainConfig::default()
        }
    }
}

pub const EXPAT_CSBN: Arm = Arm::new("expat+csbn", RankingLoss::Expat, NormVariant::Csbn);
pub const AT_CSBN: Arm = Arm::new("at+csbn", RankingLoss::At, NormVariant::Csbn);
pub const TRIPLET: Arm = Arm::new("triplet", RankingLoss::Triplet, NormVariant::Off);
pub const ID_ONLY: Arm = Arm::new("id-only", RankingLoss::None, NormVariant::Off);
pub const EXPAT_L2: Arm = Arm::new("expat+l2norm", RankingLoss::Expat, NormVariant::L2norm);

/// 32 train / 16 test identities, 20 samples per identity per modality,
/// `D = 64`, gap 0.5.
pub fn desk_data(seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = generate_split(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    Ok((
        train,
        test.ok_or_else(|| Error::invalid("no test identities"))?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub arm: &'static str,
    pub seed: u64,
    pub rank1: f64,
    pub map: f64,
    pub separability_gap: f64,
    /// Mean ranking term over the last window divided by the first.
    pub descent_ratio: f64,
    pub log: Vec<StepLog>,
}

/// `mean(last window) / mean(first window)` of the ranking term.
pub fn descent_ratio(log: &[StepLog], window: usize) -> f64 {
    let w = window.min(log.len() / 2).max(1);
    let mean = |s: &[StepLog]| s.iter().map(|l| l.ranking).sum::<f64>() / s.len() as f64;
    mean(&log[log.len() - w..]) / mean(&log[..w])
}

pub fn run_arm(train_set: &Dataset, test_set: &Dataset, arm: &Arm, seed: u64) -> Result<ArmResult> {
    let out = train(train_set, arm.train_config(seed))?;
    let emb = embed_dataset(&out.model, test_set)?;
    let report = evaluate_embeddings(
        &emb,
        test_set,
        &EvalConfig {
            seed,
            ..EvalConfig::default()
        },
    )?;
    let labels: Vec<usize> = test_set.samples().iter().map(|s| s.id).collect();
    let mods: Vec<Modality> = test_set.samples().iter().map(|s| s.modality).collect();
    let sep = angular_separability(&emb, &labels, &mods)?;
    Ok(ArmResult {
        arm: arm.name,
        seed,
        rank1: report.rank1(),
        map: report.map(),
        separability_gap: sep.gap,
        descent_ratio: descent_ratio(&out.log, DESCENT_WINDOW),
        log: out.log,
    })
}
