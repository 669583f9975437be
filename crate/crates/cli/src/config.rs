//! Run configuration file.
//!
//! ```toml
//! seed = 3                  # optional; overrides every section seed
//!
//! [synthetic]               # or [data] with train = "...", test = "..."
//! identities = 32
//!
//! [train]
//! steps = 2000
//!
//! [loss]
//! ranking = "expat"
//!
//! [csbn]
//! variant = "csbn"
//!
//! [eval]
//! mode = "single_shot"
//!
//! [output]
//! dir = "runs/expat"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::path::{Path, PathBuf};

use expat_core::csbn::{NormVariant, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use expat_core::data::SyntheticConfig;
use expat_core::eval::EvalConfig;
use expat_core::losses::LossConfig;
use expat_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
}

/// Training schedule and model size; loss and normalization live in their
/// own sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_steps: Vec<usize>,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: t.steps,
            base_lr: t.base_lr,
            decay_factor: t.decay_factor,
            decay_steps: t.decay_steps,
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
            hidden: t.hidden,
            embed_dim: t.embed_dim,
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsbnSection {
    pub variant: NormVariant,
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for CsbnSection {
    fn default() -> Self {
        Self {
            variant: NormVariant::Csbn,
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also export a 2-D projection of the test embeddings.
    pub projection: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            projection: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    pub train: TrainSection,
    pub loss: LossConfig,
    pub csbn: CsbnSection,
    pub eval: EvalConfig,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigParse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            fix(&mut d.train);
            if let Some(t) = &mut d.test {
                fix(t);
            }
        }
        fix(&mut self.output.dir);
    }

    /// Pushes the root seed into every section.
    pub fn apply_root_seed(&mut self) {
        if let Some(seed) = self.seed {
            if let Some(s) = &mut self.synthetic {
                s.seed = seed;
            }
            self.train.seed = seed;
            self.eval.seed = seed;
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            steps: t.steps,
            base_lr: t.base_lr,
            decay_factor: t.decay_factor,
            decay_steps: t.decay_steps.clone(),
            warmup_steps: t.warmup_steps,
            batch_size: t.batch_size,
            hidden: t.hidden,
            embed_dim: t.embed_dim,
            norm: self.csbn.variant,
            norm_momentum: self.csbn.momentum,
            norm_epsilon: self.csbn.epsilon,
            loss: self.loss.clone(),
            seed: t.seed,
            checkpoint_every: t.checkpoint_every,
        }
    }

    /// Every problem across all sections.
    pub fn validate(&self) -> Vec<String> {
        let mut p = Vec::new();
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => p.push("give either [data] or [synthetic], not both".to_string()),
            (None, None) => p.push("no dataset: add a [data] or [synthetic] section".to_string()),
            _ => {}
        }
        if let Some(d) = &self.data {
            for path in std::iter::once(&d.train).chain(&d.test) {
                if !path.is_file() {
                    p.push(format!("data: {} does not exist", path.display()));
                }
            }
        }
        if let Some(s) = &self.synthetic {
            p.extend(s.validate().into_iter().map(|m| format!("synthetic: {m}")));
        }
        p.extend(self.train_config().validate());
        if self.eval.trials == 0 {
            p.push("eval.trials must be >= 1".to_string());
        }
        p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
