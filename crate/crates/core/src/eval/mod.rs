//! Cross-modality retrieval evaluation: IR queries against an RGB gallery
//! sampled per trial, ranked by Euclidean distance, scored with CMC and mAP.

mod projection;

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

pub use projection::{
    angular_separability, export_projection, project_2d, Projection, Separability,
};

use crate::data::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::metric::euclidean_distance;
use crate::rng::{stream, Stream};
use crate::trainer::Model;

/// CMC is reported at these ranks.
pub const CMC_RANKS: [usize; 3] = [1, 10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalleryMode {
    SingleShot,
    MultiShot,
}

impl GalleryMode {
    /// RGB samples drawn per identity per trial (capped by availability).
    pub fn per_identity(self) -> usize {
        match self {
            GalleryMode::SingleShot => 1,
            GalleryMode::MultiShot => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GalleryMode::SingleShot => "single_shot",
            GalleryMode::MultiShot => "multi_shot",
        }
    }
}

impl std::str::FromStr for GalleryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_shot" | "single" => Ok(GalleryMode::SingleShot),
            "multi_shot" | "multi" => Ok(GalleryMode::MultiShot),
            other => Err(Error::invalid(format!("unknown gallery mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: GalleryMode,
    pub trials: usize,
    pub seed: u64,
    /// `(query camera, gallery camera)` pairs that are never compared.
    pub camera_exclusions: Vec<(u32, u32)>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mode: GalleryMode::SingleShot,
            trials: 10,
            seed: 0,
            camera_exclusions: Vec::new(),
        }
    }
}

/// Average precision of one ranked list: mean over true matches of
/// `i / r_i`, with `r_i` the 1-based rank of the `i`-th match. `None` when
/// nothing is relevant.
pub fn average_precision(relevant: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, &rel) in relevant.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Gallery indices by ascending distance, ties by ascending index.
pub fn rank_by_distance(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    order
}

/// Scores of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    /// CMC at [`CMC_RANKS`].
    pub cmc: [f64; 3],
    pub map: f64,
    pub queries: usize,
    /// Queries without any same-identity gallery entry.
    pub excluded: usize,
}

/// Scores a `Q x G` distance matrix. `allowed[q][g] == false` removes a
/// gallery entry from query `q`'s list.
pub fn score_distances(
    distances: &[Vec<f64>],
    query_ids: &[usize],
    gallery_ids: &[usize],
    allowed: Option<&[Vec<bool>]>,
) -> Result<TrialMetrics> {
    if distances.len() != query_ids.len() {
        return Err(Error::DimensionMismatch {
            op: "score_distances",
            expected: query_ids.len(),
            actual: distances.len(),
        });
    }
    let mut hits = [0usize; 3];
    let mut ap_sum = 0.0;
    let mut scored = 0usize;
    let mut excluded = 0usize;
    for (q, row) in distances.iter().enumerate() {
        if row.len() != gallery_ids.len() {
            return Err(Error::DimensionMismatch {
                op: "score_distances",
                expected: gallery_ids.len(),
                actual: row.len(),
            });
        }
        let relevant: Vec<bool> = rank_by_distance(row)
            .into_iter()
            .filter(|&gi| allowed.is_none_or(|a| a[q][gi]))
            .map(|gi| gallery_ids[gi] == query_ids[q])
            .collect();
        let Some(ap) = average_precision(&relevant) else {
            excluded += 1;
            continue;
        };
        let first = relevant.iter().position(|&r| r).expect("has a match") + 1;
        for (h, &k) in hits.iter_mut().zip(&CMC_RANKS) {
            if first <= k {
                *h += 1;
            }
        }
        ap_sum += ap;
        scored += 1;
    }
    let frac = |n: usize| {
        if scored == 0 {
            0.0
        } else {
            n as f64 / scored as f64
        }
    };
    Ok(TrialMetrics {
        cmc: hits.map(frac),
        map: if scored == 0 {
            0.0
        } else {
            ap_sum / scored as f64
        },
        queries: scored,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub mode: GalleryMode,
    pub trials: Vec<TrialMetrics>,
    /// Gallery size of every trial.
    pub gallery_sizes: Vec<usize>,
}

impl RetrievalReport {
    fn column(&self, f: impl Fn(&TrialMetrics) -> f64) -> (f64, f64) {
        let n = self.trials.len() as f64;
        let mean = self.trials.iter().map(&f).sum::<f64>() / n;
        let var = self
            .trials
            .iter()
            .map(|t| (f(t) - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }

    pub fn mean_rank(&self, k_index: usize) -> f64 {
        self.column(|t| t.cmc[k_index]).0
    }

    pub fn rank1(&self) -> f64 {
        self.mean_rank(0)
    }

    pub fn map(&self) -> f64 {
        self.column(|t| t.map).0
    }

    /// Mean and population standard deviation of
    /// `[rank1, rank10, rank20, map]` over trials.
    pub fn aggregate(&self) -> ([f64; 4], [f64; 4]) {
        let cols = [
            self.column(|t| t.cmc[0]),
            self.column(|t| t.cmc[1]),
            self.column(|t| t.cmc[2]),
            self.column(|t| t.map),
        ];
        (cols.map(|c| c.0), cols.map(|c| c.1))
    }

    pub fn excluded_queries(&self) -> usize {
        self.trials.iter().map(|t| t.excluded).sum()
    }

    /// `trial,rank1,rank10,rank20,map` rows, then `mean` and `std` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "trial,rank1,rank10,rank20,map")?;
        for (i, t) in self.trials.iter().enumerate() {
            writeln!(w, "{i},{},{},{},{}", t.cmc[0], t.cmc[1], t.cmc[2], t.map)?;
        }
        let (mean, std) = self.aggregate();
        writeln!(w, "mean,{},{},{},{}", mean[0], mean[1], mean[2], mean[3])?;
        writeln!(w, "std,{},{},{},{}", std[0], std[1], std[2], std[3])?;
        Ok(())
    }
}

/// Evaluation on precomputed embeddings; `embeddings[i]` belongs to
/// `test.samples()[i]`.
pub fn evaluate_embeddings(
    embeddings: &[Vec<f64>],
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<RetrievalReport> {
    test.validate_for_eval()?;
    if embeddings.len() != test.len() {
        return Err(Error::DimensionMismatch {
            op: "evaluate",
            expected: test.len(),
            actual: embeddings.len(),
        });
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("evaluation needs at least one trial"));
    }
    let samples = test.samples();
    let queries: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].modality == Modality::Ir)
        .collect();
    let query_ids: Vec<usize> = queries.iter().map(|&q| samples[q].id).collect();
    let index = test.index();
    let mut rng = stream(cfg.seed, Stream::Eval);

    let mut trials = Vec::with_capacity(cfg.trials);
    let mut gallery_sizes = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let mut gallery = Vec::new();
        for [rgb, _] in index.values() {
            let take = cfg.mode.per_identity().min(rgb.len());
            let mut picked: Vec<usize> = sample_indices(&mut rng, rgb.len(), take)
                .into_iter()
                .map(|j| rgb[j])
                .collect();
            picked.sort_unstable();
            gallery.extend(picked);
        }
        let gallery_ids: Vec<usize> = gallery.iter().map(|&g| samples[g].id).collect();
        let distances = queries
            .iter()
            .map(|&q| {
                gallery
                    .iter()
                    .map(|&g| euclidean_distance(&embeddings[q], &embeddings[g]))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let allowed: Option<Vec<Vec<bool>>> = (!cfg.camera_exclusions.is_empty()).then(|| {
            queries
                .iter()
                .map(|&q| {
                    gallery
                        .iter()
                        .map(|&g| {
                            !cfg.camera_exclusions
                                .contains(&(samples[q].camera, samples[g].camera))
                        })
                        .collect()
                })
                .collect()
        });
        trials.push(score_distances(
            &distances,
            &query_ids,
            &gallery_ids,
            allowed.as_deref(),
        )?);
        gallery_sizes.push(gallery.len());
    }
    Ok(RetrievalReport {
        mode: cfg.mode,
        trials,
        gallery_sizes,
    })
}

/// Embeds every test sample with the model (which must be in eval mode)
/// and evaluates.
pub fn evaluate(model: &Model, test: &Dataset, cfg: &EvalConfig) -> Result<RetrievalReport> {
    let embeddings = embed_dataset(model, test)?;
    evaluate_embeddings(&embeddings, test, cfg)
}

pub fn embed_dataset(model: &Model, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<&[f64]> = ds.samples().iter().map(|s| s.features.as_slice()).collect();
    model.embed_batch(&rows)
}
