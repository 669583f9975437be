#![allow(dead_code)]

use expat_core::data::{generate_split, Dataset, SyntheticConfig};
use expat_core::eval::CMC_RANKS;
use expat_core::losses::{Tuple, TupleBatch};
use expat_core::metric::EmbeddingVector;
use rand::Rng;

pub fn ev(v: &[f64]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec()).unwrap()
}

pub fn random_vec(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-4 {
            return v;
        }
    }
}

pub fn tuple(roles: [&[f64]; 6]) -> Tuple {
    Tuple {
        anchor_rgb: ev(roles[0]),
        anchor_ir: ev(roles[1]),
        pos_rgb: ev(roles[2]),
        pos_ir: ev(roles[3]),
        neg_rgb: ev(roles[4]),
        neg_ir: ev(roles[5]),
        anchor_id: 0,
        neg_rgb_id: 1,
        neg_ir_id: 2,
    }
}

/// Same `(a, p, n)` in both directions.
pub fn symmetric(a: &[f64], p: &[f64], n: &[f64]) -> TupleBatch {
    TupleBatch::new(vec![tuple([a, a, p, p, n, n])]).unwrap()
}

pub fn random_batch(rng: &mut impl Rng, n: usize, k: usize) -> TupleBatch {
    let tuples = (0..n)
        .map(|i| {
            let r: Vec<Vec<f64>> = (0..6).map(|_| random_vec(rng, k)).collect();
            let mut t = tuple([&r[0], &r[1], &r[2], &r[3], &r[4], &r[5]]);
            t.anchor_id = i;
            t.neg_rgb_id = n + i;
            t.neg_ir_id = 2 * n + i;
            t
        })
        .collect();
    TupleBatch::new(tuples).unwrap()
}

fn role_vectors(t: &Tuple) -> [Vec<f64>; 6] {
    [
        t.anchor_rgb.as_slice().to_vec(),
        t.anchor_ir.as_slice().to_vec(),
        t.pos_rgb.as_slice().to_vec(),
        t.pos_ir.as_slice().to_vec(),
        t.neg_rgb.as_slice().to_vec(),
        t.neg_ir.as_slice().to_vec(),
    ]
}

/// Multiplies every embedding by its own factor, drawn from `factors` in
/// tuple-major role order.
pub fn rescale(batch: &TupleBatch, factors: &[f64]) -> TupleBatch {
    let mut f = factors.iter().cycle();
    let tuples = batch
        .tuples()
        .iter()
        .map(|t| {
            let r = role_vectors(t).map(|v| {
                let c = *f.next().unwrap();
                v.iter().map(|x| x * c).collect::<Vec<f64>>()
            });
            Tuple {
                anchor_rgb: ev(&r[0]),
                anchor_ir: ev(&r[1]),
                pos_rgb: ev(&r[2]),
                pos_ir: ev(&r[3]),
                neg_rgb: ev(&r[4]),
                neg_ir: ev(&r[5]),
                ..t.clone()
            }
        })
        .collect();
    TupleBatch::new(tuples).unwrap()
}

/// Exchanges the RGB and IR role of every member.
pub fn swap_modalities(batch: &TupleBatch) -> TupleBatch {
    let tuples = batch
        .tuples()
        .iter()
        .map(|t| Tuple {
            anchor_rgb: t.anchor_ir.clone(),
            anchor_ir: t.anchor_rgb.clone(),
            pos_rgb: t.pos_ir.clone(),
            pos_ir: t.pos_rgb.clone(),
            neg_rgb: t.neg_ir.clone(),
            neg_ir: t.neg_rgb.clone(),
            anchor_id: t.anchor_id,
            neg_rgb_id: t.neg_ir_id,
            neg_ir_id: t.neg_rgb_id,
        })
        .collect();
    TupleBatch::new(tuples).unwrap()
}

/// Brute-force CMC and mAP: each gallery item's rank is counted pairwise
/// (strictly closer items plus equal-distance items with a lower index).
pub fn oracle_scores(dist: &[Vec<f64>], qids: &[usize], gids: &[usize]) -> ([f64; 3], f64, usize) {
    let mut hits = [0usize; 3];
    let mut ap_sum = 0.0;
    let mut scored = 0;
    for (q, row) in dist.iter().enumerate() {
        let g = row.len();
        let rank_of = |i: usize| {
            1 + (0..g)
                .filter(|&h| row[h] < row[i] || (row[h] == row[i] && h < i))
                .count()
        };
        let mut at_rank = vec![usize::MAX; g + 1];
        for i in 0..g {
            at_rank[rank_of(i)] = i;
        }
        let matches = (0..g).filter(|&i| gids[i] == qids[q]).count();
        if matches == 0 {
            continue;
        }
        let mut seen = 0;
        let mut ap = 0.0;
        let mut first = None;
        for r in 1..=g {
            if gids[at_rank[r]] == qids[q] {
                seen += 1;
                ap += seen as f64 / r as f64;
                first.get_or_insert(r);
            }
        }
        for (h, &k) in hits.iter_mut().zip(&CMC_RANKS) {
            if first.unwrap() <= k {
                *h += 1;
            }
        }
        ap_sum += ap / matches as f64;
        scored += 1;
    }
    let frac = |n: usize| n as f64 / scored as f64;
    (hits.map(frac), ap_sum / scored as f64, scored)
}

/// Small train split for trainer-level tests.
pub fn small_split(seed: u64, noise: f64) -> Dataset {
    generate_split(&SyntheticConfig {
        identities: 8,
        test_identities: 0,
        per_modality: 6,
        dim: 16,
        latent_dim: 6,
        nuisance_dim: 6,
        noise,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
    .0
}
