//! Bi-directional tuple sampler.
//!
//! An epoch is a shuffled pass over random same-identity (rgb, ir) anchor
//! pairs. For each pair the sampler draws a positive of the other modality
//! (never the anchor itself) and a uniformly random negative with a different
//! identity, for both directions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::rng::{stream, RngState, Stream};

/// Sample indices of one bi-directional tuple.
///
/// Direction rgb→ir uses `(a_rgb, p_ir, n_ir)`; direction ir→rgb uses
/// `(a_ir, p_rgb, n_rgb)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexTuple {
    pub a_rgb: usize,
    pub a_ir: usize,
    pub p_ir: usize,
    pub n_ir: usize,
    pub p_rgb: usize,
    pub n_rgb: usize,
}

impl IndexTuple {
    /// Indices in the order `[a_rgb, a_ir, p_rgb, p_ir, n_rgb, n_ir]`.
    pub fn refs(&self) -> [usize; 6] {
        [
            self.a_rgb, self.a_ir, self.p_rgb, self.p_ir, self.n_rgb, self.n_ir,
        ]
    }
}

/// Everything needed to continue a sampler exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    pub rng: RngState,
    pub order: Vec<(usize, usize)>,
    pub cursor: usize,
    pub epoch: u64,
}

#[derive(Debug, Clone)]
pub struct TupleSampler {
    ids: Vec<usize>,
    /// Sample index to identity.
    labels: Vec<usize>,
    /// `by_id[k][m]`: samples of identity `ids[k]` in modality `m`.
    by_id: Vec<[Vec<usize>; 2]>,
    /// All samples of each modality.
    pool: [Vec<usize>; 2],
    rng: ChaCha8Rng,
    order: Vec<(usize, usize)>,
    cursor: usize,
    epoch: u64,
}

impl TupleSampler {
    pub fn new(dataset: &Dataset, seed: u64) -> Result<Self> {
        dataset.validate_for_training()?;
        let index = dataset.index();
        let ids: Vec<usize> = index.keys().copied().collect();
        let by_id: Vec<[Vec<usize>; 2]> = index.into_values().collect();
        let mut pool: [Vec<usize>; 2] = Default::default();
        for (i, s) in dataset.samples().iter().enumerate() {
            pool[s.modality as usize].push(i);
        }
        Ok(Self {
            ids,
            labels: dataset.samples().iter().map(|s| s.id).collect(),
            by_id,
            pool,
            rng: stream(seed, Stream::Sampler),
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Anchor pairs per epoch.
    pub fn epoch_len(&self) -> usize {
        self.by_id.iter().map(|[r, i]| r.len().max(i.len())).sum()
    }

    fn new_epoch(&mut self) {
        let mut order = Vec::with_capacity(self.epoch_len());
        for [rgb, ir] in &self.by_id {
            let mut rgb = rgb.clone();
            let mut ir = ir.clone();
            rgb.shuffle(&mut self.rng);
            ir.shuffle(&mut self.rng);
            for j in 0..rgb.len().max(ir.len()) {
                order.push((rgb[j % rgb.len()], ir[j % ir.len()]));
            }
        }
        order.shuffle(&mut self.rng);
        self.order = order;
        self.cursor = 0;
    }

    fn positive(&mut self, anchor: usize, m: Modality) -> usize {
        let k = self
            .ids
            .binary_search(&self.labels[anchor])
            .expect("known id");
        let same = &self.by_id[k][m as usize];
        loop {
            let p = same[self.rng.random_range(0..same.len())];
            if p != anchor {
                return p;
            }
        }
    }

    fn negative(&mut self, id: usize, m: Modality) -> usize {
        let pool = &self.pool[m as usize];
        loop {
            let n = pool[self.rng.random_range(0..pool.len())];
            if self.labels[n] != id {
                return n;
            }
        }
    }

    /// Next `n` tuples; batches continue across epoch boundaries.
    pub fn next_batch(&mut self, n: usize) -> Result<Vec<IndexTuple>> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor >= self.order.len() {
                if !self.order.is_empty() {
                    self.epoch += 1;
                }
                self.new_epoch();
            }
            let (a_rgb, a_ir) = self.order[self.cursor];
            self.cursor += 1;
            let id = self.labels[a_rgb];
            // The positive of the rgb anchor lives in ir and must differ
            // from the ir anchor, and symmetrically.
            let p_ir = self.positive(a_ir, Modality::Ir);
            let p_rgb = self.positive(a_rgb, Modality::Rgb);
            let n_ir = self.negative(id, Modality::Ir);
            let n_rgb = self.negative(id, Modality::Rgb);
            out.push(IndexTuple {
                a_rgb,
                a_ir,
                p_ir,
                n_ir,
                p_rgb,
                n_rgb,
            });
        }
        Ok(out)
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            rng: RngState::capture(&self.rng),
            order: self.order.clone(),
            cursor: self.cursor,
            epoch: self.epoch,
        }
    }

    pub fn restore(&mut self, state: &SamplerState) -> Result<()> {
        let n = self.labels.len();
        if state.cursor > state.order.len() || state.order.iter().any(|&(r, i)| r >= n || i >= n) {
            return Err(Error::InvalidState(
                "sampler state does not match dataset".into(),
            ));
        }
        self.rng = state.rng.restore();
        self.order = state.order.clone();
        self.cursor = state.cursor;
        self.epoch = state.epoch;
        Ok(())
    }
}
