//! Training loop: bi-directional tuple batches through the shared encoder
//! and common-space normalization, hybrid loss, ADAM with warmup and step
//! decay, and exact checkpoint/resume.

mod checkpoint;
mod model;
mod optim;
mod schedule;

use std::sync::mpsc::{SyncSender, TrySendError};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Array, Checkpoint, Container, Entry, FORMAT_VERSION, MAGIC};
pub use model::{model_loss_fn, BatchLoss, Model, ModelConfig, ModelVars, PARAM_NAMES};
pub use optim::{adam_step, Adam, AdamConfig};
pub use schedule::{decimal_mul, lr_schedule};

use crate::csbn::NormVariant;
use crate::data::{Dataset, TupleSampler};
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_steps: Vec<usize>,
    pub warmup_steps: usize,
    /// Tuples per batch (`N`); each batch holds `6N` samples.
    pub batch_size: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub norm: NormVariant,
    /// Running-statistics momentum of the normalization layer.
    pub norm_momentum: f64,
    pub norm_epsilon: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            base_lr: 3e-4,
            decay_factor: 0.1,
            decay_steps: vec![1000, 1500],
            warmup_steps: 100,
            batch_size: 8,
            hidden: 128,
            embed_dim: 32,
            norm: NormVariant::Csbn,
            norm_momentum: crate::csbn::DEFAULT_MOMENTUM,
            norm_epsilon: crate::csbn::DEFAULT_EPSILON,
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// 30000 steps decayed at 10000 and 20000 with 1000 warmup steps.
    pub fn long_schedule() -> Self {
        Self {
            steps: 30_000,
            decay_steps: vec![10_000, 20_000],
            warmup_steps: 1000,
            ..Self::default()
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        lr_schedule(step, self)
    }

    /// Every problem with the configuration, not only the first.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.steps == 0 {
            p.push("train.steps must be >= 1".to_string());
        }
        if !(self.base_lr.is_finite() && self.base_lr >= 0.0) {
            p.push(format!(
                "train.base_lr must be finite and >= 0, got {}",
                self.base_lr
            ));
        }
        if !(self.decay_factor.is_finite() && self.decay_factor > 0.0) {
            p.push(format!(
                "train.decay_factor must be > 0, got {}",
                self.decay_factor
            ));
        }
        if self.decay_steps.windows(2).any(|w| w[0] >= w[1]) {
            p.push("train.decay_steps must be strictly increasing".to_string());
        }
        if self.batch_size == 0 {
            p.push("train.batch_size must be >= 1".to_string());
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            p.push("train.hidden and train.embed_dim must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.norm_momentum) {
            p.push(format!(
                "csbn.momentum must lie in [0, 1], got {}",
                self.norm_momentum
            ));
        }
        if !(self.norm_epsilon.is_finite() && self.norm_epsilon > 0.0) {
            p.push(format!(
                "csbn.epsilon must be > 0, got {}",
                self.norm_epsilon
            ));
        }
        p.extend(
            self.loss
                .validate()
                .into_iter()
                .map(|m| format!("loss: {m}")),
        );
        p
    }

    fn check(&self) -> Result<()> {
        let p = self.validate();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(p.join("; ")))
        }
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    pub ranking: f64,
    pub identity: f64,
    pub lr: f64,
}

pub struct Trainer {
    config: TrainConfig,
    model: Model,
    optimizer: Adam,
    sampler: TupleSampler,
    features: Vec<Vec<f64>>,
    classes: Vec<usize>,
    step: usize,
    metrics: Option<SyncSender<StepLog>>,
    dropped_metrics: usize,
}

impl Trainer {
    pub fn new(dataset: &Dataset, config: TrainConfig) -> Result<Self> {
        config.check()?;
        dataset.validate_for_training()?;
        let class_map = dataset.class_map();
        let mut init = stream(config.seed, Stream::Init);
        let mut model = Model::init(
            ModelConfig {
                input_dim: dataset.dim(),
                hidden: config.hidden,
                embed_dim: config.embed_dim,
                classes: class_map.len(),
                norm: config.norm,
            },
            &mut init,
        )?;
        model.csbn.momentum = config.norm_momentum;
        model.csbn.epsilon = config.norm_epsilon;
        let shapes: Vec<_> = model.params().iter().map(|p| p.shape()).collect();
        Ok(Self {
            optimizer: Adam::new(&shapes, AdamConfig::default()),
            sampler: TupleSampler::new(dataset, config.seed)?,
            features: dataset
                .samples()
                .iter()
                .map(|s| s.features.clone())
                .collect(),
            classes: dataset.samples().iter().map(|s| class_map[&s.id]).collect(),
            model,
            config,
            step: 0,
            metrics: None,
            dropped_metrics: 0,
        })
    }

    /// Continues from a checkpoint taken on the same dataset and config.
    pub fn resume(dataset: &Dataset, config: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        let mut t = Self::new(dataset, config)?;
        if ckpt.model.config != t.model.config {
            return Err(Error::Checkpoint(format!(
                "model shape {:?} does not match configuration {:?}",
                ckpt.model.config, t.model.config
            )));
        }
        let sampler = ckpt
            .sampler
            .ok_or_else(|| Error::Checkpoint("checkpoint has no sampler state".into()))?;
        t.sampler.restore(&sampler)?;
        t.optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
        t.model = ckpt.model;
        t.model.train();
        t.step = ckpt.step;
        Ok(t)
    }

    /// Sends every step log on `tx` without blocking; records that do not
    /// fit the channel buffer are dropped and counted.
    pub fn with_metrics(mut self, tx: SyncSender<StepLog>) -> Self {
        self.metrics = Some(tx);
        self
    }

    pub fn dropped_metrics(&self) -> usize {
        self.dropped_metrics
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Completed steps.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            model: self.model.clone(),
            optimizer: Some(self.optimizer.clone()),
            sampler: Some(self.sampler.state()),
        }
    }

    /// Trained model switched to eval mode.
    pub fn into_model(mut self) -> Model {
        self.model.eval();
        self.model
    }

    /// Samples a batch, runs forward/backward and one optimizer update.
    pub fn step(&mut self) -> Result<StepLog> {
        let n = self.config.batch_size;
        let tuples = self.sampler.next_batch(n)?;
        let d = self.model.config.input_dim;
        let mut x = Vec::with_capacity(6 * n * d);
        for role in 0..6 {
            for t in &tuples {
                x.extend_from_slice(&self.features[t.refs()[role]]);
            }
        }
        let labels: Vec<usize> = tuples.iter().map(|t| self.classes[t.a_rgb]).collect();

        let step = self.step;
        let mut g = Graph::new();
        let vars = self.model.leaves(&mut g);
        let loss = self
            .model
            .batch_loss_graph(
                &mut g,
                &vars,
                Tensor::from_vec(6 * n, d, x),
                &labels,
                &self.config.loss,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss {
                    total,
                    ranking,
                    identity,
                    ..
                } => Error::NonFiniteLoss {
                    step,
                    total,
                    ranking,
                    identity,
                },
                other => other,
            })?;
        let parts = loss.vars.parts(&g);
        if !parts.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                total: parts.total,
                ranking: parts.ranking,
                identity: parts.identity,
            });
        }
        let grads = g.backward(loss.vars.total)?;
        let grads: Vec<Tensor> = vars.as_array().iter().map(|&v| grads.wrt(v)).collect();
        let lr = self.config.lr_at(step);
        let trainable = self.model.trainable();
        self.optimizer.step(
            &mut self.model.params_mut(),
            &grads,
            &trainable,
            &PARAM_NAMES,
            lr,
        )?;
        self.step += 1;

        let log = StepLog {
            step,
            total: parts.total,
            ranking: parts.ranking,
            identity: parts.identity,
            lr,
        };
        if let Some(tx) = &self.metrics {
            match tx.try_send(log) {
                Ok(()) => {}
                Err(TrySendError::Full(_)) => self.dropped_metrics += 1,
                Err(TrySendError::Disconnected(_)) => self.metrics = None,
            }
        }
        Ok(log)
    }

    /// Runs until `steps` are complete. `on_step` sees each log and the
    /// trainer after the update, e.g. for periodic checkpoints.
    pub fn run(
        &mut self,
        mut on_step: impl FnMut(&StepLog, &Self) -> Result<()>,
    ) -> Result<Vec<StepLog>> {
        let mut logs = Vec::with_capacity(self.config.steps.saturating_sub(self.step));
        while !self.is_finished() {
            let log = self.step()?;
            on_step(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }
}

pub struct TrainOutcome {
    /// In eval mode.
    pub model: Model,
    pub log: Vec<StepLog>,
}

pub fn train(dataset: &Dataset, config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config)?;
    let log = trainer.run(|_, _| Ok(()))?;
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
    })
}

/// Gradient check of the whole pipeline on a tiny random model
/// (`D = 8, H = 8, K = 4, N = 2`).
pub fn tiny_model_grad_check(
    seed: u64,
    norm: NormVariant,
    loss: &LossConfig,
    opts: crate::diff::GradCheckOptions,
) -> Result<crate::diff::GradCheck> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(
        ModelConfig {
            input_dim: 8,
            hidden: 8,
            embed_dim: 4,
            classes: 3,
            norm,
        },
        &mut rng,
    )?;
    model.csbn.gamma = Tensor::from_vec(1, 4, (0..4).map(|_| rng.random_range(0.5..1.5)).collect());
    model.csbn.beta = Tensor::from_vec(1, 4, (0..4).map(|_| rng.random_range(-0.5..0.5)).collect());
    model.b1 = Tensor::from_vec(1, 8, (0..8).map(|_| rng.random_range(-0.1..0.1)).collect());
    model.b2 = Tensor::from_vec(1, 4, (0..4).map(|_| rng.random_range(-0.1..0.1)).collect());
    let x = Tensor::from_vec(
        12,
        8,
        (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    let labels = [rng.random_range(0..3), rng.random_range(0..3)];
    let params: Vec<Tensor> = model.params().iter().map(|p| (*p).clone()).collect();
    crate::diff::grad_check_with(&params, model_loss_fn(&model, &x, &labels, loss), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};
    use std::sync::mpsc::sync_channel;

    fn small_data() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            identities: 6,
            test_identities: 0,
            per_modality: 4,
            dim: 12,
            latent_dim: 4,
            nuisance_dim: 4,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            steps: 30,
            decay_steps: vec![15, 25],
            warmup_steps: 5,
            batch_size: 4,
            hidden: 16,
            embed_dim: 8,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn first_step_is_reproducible() {
        let ds = small_data();
        let a = Trainer::new(&ds, small_config()).unwrap().step().unwrap();
        let b = Trainer::new(&ds, small_config()).unwrap().step().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total.to_bits(), b.total.to_bits());
        assert!(a.ranking > 0.0 && a.identity > 0.0);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let ds = small_data();
        let cfg = TrainConfig {
            base_lr: 0.0,
            ..small_config()
        };
        let mut t = Trainer::new(&ds, cfg).unwrap();
        let before: Vec<Tensor> = t.model().params().iter().map(|p| (*p).clone()).collect();
        t.run(|_, _| Ok(())).unwrap();
        let after: Vec<Tensor> = t.model().params().iter().map(|p| (*p).clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn resume_is_bit_identical() {
        let ds = small_data();
        let mut full = Trainer::new(&ds, small_config()).unwrap();
        for _ in 0..10 {
            full.step().unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        full.checkpoint().save(&path).unwrap();
        let rest = full.run(|_, _| Ok(())).unwrap();

        let ckpt = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.step, 10);
        let mut resumed = Trainer::resume(&ds, small_config(), ckpt).unwrap();
        let rest2 = resumed.run(|_, _| Ok(())).unwrap();
        assert_eq!(rest, rest2);
        assert_eq!(full.model(), resumed.model());
        assert_eq!(full.checkpoint(), resumed.checkpoint());
    }

    #[test]
    fn metrics_channel_never_blocks() {
        let ds = small_data();
        let (tx, rx) = sync_channel(4);
        let mut t = Trainer::new(&ds, small_config()).unwrap().with_metrics(tx);
        let logs = t.run(|_, _| Ok(())).unwrap();
        let got: Vec<StepLog> = rx.try_iter().collect();
        assert_eq!(got, logs[..4]);
        assert_eq!(t.dropped_metrics(), 26);
    }

    #[test]
    fn non_finite_loss_reports_step() {
        let mut ds = small_data();
        let samples: Vec<_> = ds
            .samples()
            .iter()
            .cloned()
            .map(|mut s| {
                s.features[0] = 1e300;
                s
            })
            .collect();
        ds = Dataset::new(samples, ds.split).unwrap();
        let cfg = TrainConfig {
            norm: NormVariant::Off,
            ..small_config()
        };
        let err = Trainer::new(&ds, cfg).unwrap().step().unwrap_err();
        assert!(
            matches!(err, Error::NonFiniteLoss { step: 0, .. }),
            "unexpected {err}"
        );
    }

    #[test]
    fn validation_lists_every_problem() {
        let cfg = TrainConfig {
            steps: 0,
            batch_size: 0,
            decay_steps: vec![5, 5],
            ..Default::default()
        };
        assert_eq!(cfg.validate().len(), 3);
    }

    #[test]
    fn tiny_model_gradients() {
        for seed in 0..5 {
            let r = tiny_model_grad_check(
                seed,
                NormVariant::Csbn,
                &LossConfig::default(),
                Default::default(),
            )
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "{seed}: {r:?}");
            assert_eq!(r.parameter_count, 8 * 8 + 8 + 4 * 8 + 4 + 3 * 4 + 4 + 4);
        }
    }
}
