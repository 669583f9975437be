//! Two-modality datasets: samples, synthetic generation, CSV files and the
//! bi-directional tuple sampler.

mod io;
mod sampler;
mod synthetic;

use std::collections::BTreeMap;

pub use io::{load_dataset, save_dataset, write_dataset};
pub use sampler::{IndexTuple, SamplerState, TupleSampler};
pub use synthetic::{generate_split, generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub fn token(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Modality::Rgb => Modality::Ir,
            Modality::Ir => Modality::Rgb,
        }
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "ir" => Ok(Modality::Ir),
            other => Err(format!(
                "unknown modality token `{other}` (expected `rgb` or `ir`)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: usize,
    pub modality: Modality,
    pub camera: u32,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, split: Split) -> Result<Self> {
        let dim = samples
            .first()
            .map(|s| s.features.len())
            .ok_or_else(|| Error::invalid("dataset has no samples"))?;
        if dim == 0 {
            return Err(Error::invalid("samples must have at least one feature"));
        }
        if let Some(s) = samples.iter().find(|s| s.features.len() != dim) {
            return Err(Error::DimensionMismatch {
                op: "dataset",
                expected: dim,
                actual: s.features.len(),
            });
        }
        Ok(Self {
            samples,
            dim,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sorted distinct identity labels.
    pub fn identities(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn count(&self, modality: Modality) -> usize {
        self.samples
            .iter()
            .filter(|s| s.modality == modality)
            .count()
    }

    /// Sample indices grouped by identity then modality.
    pub fn index(&self) -> BTreeMap<usize, [Vec<usize>; 2]> {
        let mut map: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let slot = map.entry(s.id).or_default();
            slot[s.modality as usize].push(i);
        }
        map
    }

    /// Maps identity labels to contiguous class indices `0..C`.
    pub fn class_map(&self) -> BTreeMap<usize, usize> {
        self.identities()
            .into_iter()
            .enumerate()
            .map(|(c, id)| (id, c))
            .collect()
    }

    /// Training requirements: at least two identities and two samples per
    /// identity in each modality.
    pub fn validate_for_training(&self) -> Result<()> {
        let index = self.index();
        if index.len() < 2 {
            return Err(Error::invalid(format!(
                "training needs at least 2 identities, found {}",
                index.len()
            )));
        }
        for (id, per_mod) in &index {
            for m in [Modality::Rgb, Modality::Ir] {
                let n = per_mod[m as usize].len();
                if n < 2 {
                    return Err(Error::invalid(format!(
                        "identity {id} has {n} {} sample(s); at least 2 are required",
                        m.token()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Evaluation requirement: every identity appears in both modalities.
    pub fn validate_for_eval(&self) -> Result<()> {
        for (id, per_mod) in self.index() {
            for m in [Modality::Rgb, Modality::Ir] {
                if per_mod[m as usize].is_empty() {
                    return Err(Error::invalid(format!(
                        "identity {id} has no {} samples",
                        m.token()
                    )));
                }
            }
        }
        Ok(())
    }
}
