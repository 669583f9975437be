//! Synthetic two-modality identities with a controllable linear modality gap.
//!
//! Each identity owns a latent vector `z`. A sample of modality `m` is
//!
//! ```text
//! x = s * A_m (z + noise * e) + gap * o_m + noise * B_m u
//! ```
//!
//! where `A_ir = cos(gap * pi/2) A_rgb + sin(gap * pi/2) Delta` rotates the
//! IR map away from the RGB map (`gap = 1` makes them independent), `o_m` is a
//! per-modality offset (zero for RGB), `B_m u` is a modality-specific
//! nuisance component and `s = exp(noise * intensity_jitter * xi)` is a
//! per-sample intensity factor. With `gap = 0` and `noise = 0` both
//! modalities of an identity produce the same vector.

use std::f64::consts::FRAC_PI_2;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Modality, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

const RGB_CAMERAS: [u32; 4] = [1, 2, 4, 5];
const IR_CAMERAS: [u32; 2] = [3, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Training identities.
    pub identities: usize,
    /// Held-out identities generated alongside by [`generate_split`].
    pub test_identities: usize,
    /// Samples per identity per modality.
    pub per_modality: usize,
    /// Raw input dimension.
    pub dim: usize,
    pub latent_dim: usize,
    pub nuisance_dim: usize,
    pub gap: f64,
    pub noise: f64,
    pub intensity_jitter: f64,
    /// Norm of the IR offset at `gap = 1`, relative to the expected norm of
    /// an identity's signal.
    pub offset_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            identities: 32,
            test_identities: 16,
            per_modality: 20,
            dim: 64,
            latent_dim: 16,
            nuisance_dim: 16,
            gap: 0.5,
            noise: 0.45,
            intensity_jitter: 1.0,
            offset_scale: 6.0,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.identities < 2 {
            problems.push(format!(
                "need at least 2 identities, got {}",
                self.identities
            ));
        }
        if self.per_modality < 2 {
            problems.push(format!(
                "need at least 2 samples per identity per modality, got {}",
                self.per_modality
            ));
        }
        if self.dim < 4 {
            problems.push(format!("input dimension must be >= 4, got {}", self.dim));
        }
        if self.latent_dim == 0 {
            problems.push("latent dimension must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.gap) {
            problems.push(format!("gap must lie in [0, 1], got {}", self.gap));
        }
        for (name, v) in [
            ("noise", self.noise),
            ("intensity_jitter", self.intensity_jitter),
            ("offset_scale", self.offset_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        problems
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * normal(rng))
        .collect::<Vec<f64>>()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    gaussian_matrix(rng, 1, n, scale)
}

/// `out += c * M v` with `M` row-major `rows x v.len()`.
fn add_matvec(out: &mut [f64], m: &[f64], v: &[f64], c: f64) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        *o += c * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

struct ModalityMaps {
    signal: [Vec<f64>; 2],
    nuisance: [Vec<f64>; 2],
    offset: [Vec<f64>; 2],
}

fn draw_maps(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> ModalityMaps {
    let (d, l, n) = (cfg.dim, cfg.latent_dim, cfg.nuisance_dim);
    let col_scale = 1.0 / (d as f64).sqrt();
    let a_rgb = gaussian_matrix(rng, d, l, col_scale);
    let delta = gaussian_matrix(rng, d, l, col_scale);
    let (c, s) = ((cfg.gap * FRAC_PI_2).cos(), (cfg.gap * FRAC_PI_2).sin());
    let a_ir: Vec<f64> = a_rgb
        .iter()
        .zip(&delta)
        .map(|(a, e)| c * a + s * e)
        .collect();
    let b_rgb = gaussian_matrix(rng, d, n, col_scale);
    let b_ir = gaussian_matrix(rng, d, n, col_scale);
    let offset = gaussian_vec(rng, d, cfg.offset_scale * (l as f64 / d as f64).sqrt());
    ModalityMaps {
        signal: [a_rgb, a_ir],
        nuisance: [b_rgb, b_ir],
        offset: [vec![0.0; d], offset.iter().map(|o| cfg.gap * o).collect()],
    }
}

fn identity_samples(
    cfg: &SyntheticConfig,
    maps: &ModalityMaps,
    id: usize,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<Sample>,
) {
    let z = gaussian_vec(rng, cfg.latent_dim, 1.0);
    for modality in [Modality::Rgb, Modality::Ir] {
        let m = modality as usize;
        for j in 0..cfg.per_modality {
            let latent: Vec<f64> = z.iter().map(|zi| zi + cfg.noise * normal(rng)).collect();
            let xi = normal(rng);
            let intensity = (cfg.noise * cfg.intensity_jitter * xi).exp();
            let mut x = maps.offset[m].clone();
            add_matvec(&mut x, &maps.signal[m], &latent, intensity);
            if cfg.nuisance_dim > 0 {
                let u = gaussian_vec(rng, cfg.nuisance_dim, 1.0);
                add_matvec(&mut x, &maps.nuisance[m], &u, cfg.noise);
            }
            let camera = match modality {
                Modality::Rgb => RGB_CAMERAS[j % RGB_CAMERAS.len()],
                Modality::Ir => IR_CAMERAS[j % IR_CAMERAS.len()],
            };
            out.push(Sample {
                id,
                modality,
                camera,
                features: x,
            });
        }
    }
}

/// Train split (identities `0..P`) and test split (identities
/// `P..P+test_identities`) drawn from the same modality maps.
pub fn generate_split(cfg: &SyntheticConfig) -> Result<(Dataset, Option<Dataset>)> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::invalid(problems.join("; ")));
    }
    let mut rng = stream(cfg.seed, Stream::Data);
    let maps = draw_maps(cfg, &mut rng);
    let mut train = Vec::new();
    for id in 0..cfg.identities {
        identity_samples(cfg, &maps, id, &mut rng, &mut train);
    }
    let mut test = Vec::new();
    for id in cfg.identities..cfg.identities + cfg.test_identities {
        identity_samples(cfg, &maps, id, &mut rng, &mut test);
    }
    let train = Dataset::new(train, Split::Train)?;
    let test = if test.is_empty() {
        None
    } else {
        Some(Dataset::new(test, Split::Test)?)
    };
    Ok((train, test))
}

/// Training split only.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    Ok(generate_split(cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_dataset;
    use crate::metric::cosine_similarity;

    #[test]
    fn zero_gap_zero_noise_gives_identical_modalities() {
        let cfg = SyntheticConfig {
            identities: 3,
            test_identities: 0,
            per_modality: 2,
            dim: 8,
            gap: 0.0,
            noise: 0.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        for (_, [rgb, ir]) in ds.index() {
            let r = &ds.samples()[rgb[0]].features;
            for &i in &ir {
                assert_eq!(&ds.samples()[i].features, r);
            }
        }
    }

    #[test]
    fn deterministic_bytes() {
        let cfg = SyntheticConfig {
            identities: 32,
            test_identities: 0,
            per_modality: 20,
            dim: 64,
            seed: 3,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        save_dataset(&generate_synthetic(&cfg).unwrap(), &p1).unwrap();
        save_dataset(&generate_synthetic(&cfg).unwrap(), &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn modality_gap_is_measurable() {
        let cfg = SyntheticConfig {
            identities: 16,
            test_identities: 0,
            per_modality: 6,
            gap: 1.0,
            ..Default::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let s = ds.samples();
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0, 0.0, 0);
        for (_, [rgb, ir]) in ds.index() {
            for (i, &a) in rgb.iter().enumerate() {
                for &b in &rgb[i + 1..] {
                    within += cosine_similarity(&s[a].features, &s[b].features).unwrap();
                    nw += 1;
                }
                for &b in &ir {
                    cross += cosine_similarity(&s[a].features, &s[b].features).unwrap();
                    nc += 1;
                }
            }
        }
        let (within, cross) = (within / nw as f64, cross / nc as f64);
        assert!(cross < within, "cross {cross} within {within}");
    }

    #[test]
    fn split_identities_are_disjoint() {
        let (train, test) = generate_split(&SyntheticConfig {
            identities: 4,
            test_identities: 3,
            per_modality: 2,
            ..Default::default()
        })
        .unwrap();
        let test = test.unwrap();
        assert_eq!(train.identities(), vec![0, 1, 2, 3]);
        assert_eq!(test.identities(), vec![4, 5, 6]);
        assert!(train.validate_for_training().is_ok());
        assert_eq!(test.count(Modality::Ir), 6);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cfg = SyntheticConfig {
            identities: 1,
            per_modality: 1,
            dim: 3,
            ..Default::default()
        };
        assert_eq!(cfg.validate().len(), 3);
        assert!(generate_synthetic(&cfg).is_err());
    }
}
