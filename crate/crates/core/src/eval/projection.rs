//! Angular separability and 2-D principal-component projection of
//! embeddings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::metric::cosine_similarity;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Separability {
    /// Mean cosine over cross-modality pairs with the same label.
    pub intra: f64,
    /// Mean cosine over cross-modality pairs with different labels.
    pub inter: f64,
    pub gap: f64,
}

/// Cosine statistics over every (rgb, ir) pair of embeddings.
pub fn angular_separability(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    modalities: &[Modality],
) -> Result<Separability> {
    if labels.len() != embeddings.len() || modalities.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            op: "angular_separability",
            expected: embeddings.len(),
            actual: labels.len().min(modalities.len()),
        });
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "angular separability needs at least 2 classes",
        ));
    }
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0usize, 0.0, 0usize);
    for i in (0..embeddings.len()).filter(|&i| modalities[i] == Modality::Rgb) {
        for j in (0..embeddings.len()).filter(|&j| modalities[j] == Modality::Ir) {
            let c = cosine_similarity(&embeddings[i], &embeddings[j])?;
            if labels[i] == labels[j] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                ne += 1;
            }
        }
    }
    if ni == 0 || ne == 0 {
        return Err(Error::invalid(
            "angular separability needs same-label and different-label cross-modality pairs",
        ));
    }
    let (intra, inter) = (intra / ni as f64, inter / ne as f64);
    Ok(Separability {
        intra,
        inter,
        gap: intra - inter,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Coordinates on the two leading principal axes.
    pub points: Vec<[f64; 2]>,
    /// Leading two eigenvalues of the 1/n covariance.
    pub eigenvalues: [f64; 2],
    /// Numerical rank of the covariance, capped at 2.
    pub rank: usize,
}

/// Projects centered embeddings onto the top-2 eigenvectors of their
/// covariance. Axes beyond the numerical rank are zero.
pub fn project_2d(embeddings: &[Vec<f64>]) -> Result<Projection> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "projection needs at least 3 embeddings, got {n}"
        )));
    }
    let k = embeddings[0].len();
    if let Some(e) = embeddings.iter().find(|e| e.len() != k) {
        return Err(Error::DimensionMismatch {
            op: "project_2d",
            expected: k,
            actual: e.len(),
        });
    }
    let mut x = DMatrix::from_fn(n, k, |r, c| embeddings[r][c]);
    for c in 0..k {
        let mean = x.column(c).mean();
        x.column_mut(c).add_scalar_mut(-mean);
    }
    let cov = (x.transpose() * &x) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let tol = 1e-12 * top.max(f64::MIN_POSITIVE) * k as f64;
    let mut axes = Vec::new();
    let mut eigenvalues = [0.0; 2];
    for (slot, &i) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[i];
        if lambda > tol && top > 0.0 {
            let mut v = eig.eigenvectors.column(i).clone_owned();
            // Fix the sign so the largest-magnitude component is positive.
            let lead = v
                .iter()
                .copied()
                .fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            if lead < 0.0 {
                v.neg_mut();
            }
            axes.push(v);
            eigenvalues[slot] = lambda;
        }
    }
    let rank = axes.len();
    let points = (0..n)
        .map(|r| {
            let mut p = [0.0; 2];
            for (a, axis) in axes.iter().enumerate() {
                p[a] = x.row(r).iter().zip(axis.iter()).map(|(u, v)| u * v).sum();
            }
            p
        })
        .collect();
    Ok(Projection {
        points,
        eigenvalues,
        rank,
    })
}

/// Writes `label,modality,x,y` rows. A rank-deficient projection gets a
/// leading `#` comment line.
pub fn export_projection(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    modalities: &[Modality],
    path: &Path,
) -> Result<Projection> {
    if labels.len() != embeddings.len() || modalities.len() != embeddings.len() {
        return Err(Error::DimensionMismatch {
            op: "export_projection",
            expected: embeddings.len(),
            actual: labels.len().min(modalities.len()),
        });
    }
    let proj = project_2d(embeddings)?;
    let mut w = BufWriter::new(File::create(path)?);
    if proj.rank < 2 {
        writeln!(
            w,
            "# degenerate covariance (rank {}): missing axes padded with zeros",
            proj.rank
        )?;
    }
    writeln!(w, "label,modality,x,y")?;
    for ((p, l), m) in proj.points.iter().zip(labels).zip(modalities) {
        writeln!(w, "{l},{},{},{}", m.token(), p[0], p[1])?;
    }
    w.flush()?;
    Ok(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_classes() {
        let emb = vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
        ];
        let mods = [Modality::Rgb, Modality::Rgb, Modality::Ir, Modality::Ir];
        let s = angular_separability(&emb, &[0, 1, 0, 1], &mods).unwrap();
        assert_eq!((s.intra, s.inter, s.gap), (1.0, 0.0, 1.0));
    }

    #[test]
    fn identical_embeddings_have_no_gap() {
        let emb = vec![vec![0.3, -0.4]; 4];
        let mods = [Modality::Rgb, Modality::Ir, Modality::Rgb, Modality::Ir];
        let s = angular_separability(&emb, &[0, 0, 1, 1], &mods).unwrap();
        assert!((s.intra - 1.0).abs() < 1e-15 && (s.inter - 1.0).abs() < 1e-15);
        assert!(s.gap.abs() < 1e-15);
        assert!(angular_separability(&emb, &[0; 4], &mods).is_err());
    }

    #[test]
    fn separability_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 30;
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let mods: Vec<Modality> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Modality::Rgb
                } else {
                    Modality::Ir
                }
            })
            .collect();
        let s = angular_separability(&emb, &labels, &mods).unwrap();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let (mut same, mut diff) = (Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if mods[i] == Modality::Rgb && mods[j] == Modality::Ir {
                    let c = cos(&emb[i], &emb[j]);
                    if labels[i] == labels[j] {
                        same.push(c)
                    } else {
                        diff.push(c)
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((s.intra - mean(&same)).abs() < 1e-12);
        assert!((s.inter - mean(&diff)).abs() < 1e-12);
    }

    /// Leading eigenvalue by power iteration with deflation.
    fn power_top2(cov: &[Vec<f64>]) -> [f64; 2] {
        let k = cov.len();
        let mut m: Vec<Vec<f64>> = cov.to_vec();
        let mut out = [0.0; 2];
        for slot in &mut out {
            let mut v = vec![1.0; k];
            v[0] = 1.3;
            let mut lambda = 0.0;
            for _ in 0..5000 {
                let w: Vec<f64> = (0..k)
                    .map(|i| (0..k).map(|j| m[i][j] * v[j]).sum())
                    .collect();
                let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                v = w.iter().map(|x| x / n).collect();
                lambda = n;
            }
            *slot = lambda;
            for i in 0..k {
                for j in 0..k {
                    m[i][j] -= lambda * v[i] * v[j];
                }
            }
        }
        out
    }

    #[test]
    fn projected_variance_is_top_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 60;
        let k = 5;
        let scales = [3.0, 2.0, 1.0, 0.5, 0.2];
        let emb: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..k)
                    .map(|c| scales[c] * rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        let proj = project_2d(&emb).unwrap();
        let mean: Vec<f64> = (0..k)
            .map(|c| emb.iter().map(|e| e[c]).sum::<f64>() / n as f64)
            .collect();
        let cov: Vec<Vec<f64>> = (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| {
                        emb.iter()
                            .map(|e| (e[a] - mean[a]) * (e[b] - mean[b]))
                            .sum::<f64>()
                            / n as f64
                    })
                    .collect()
            })
            .collect();
        let oracle = power_top2(&cov);
        for axis in 0..2 {
            let var = proj.points.iter().map(|p| p[axis] * p[axis]).sum::<f64>() / n as f64;
            assert!(
                (var - oracle[axis]).abs() < 1e-8,
                "{var} vs {}",
                oracle[axis]
            );
            assert!((proj.eigenvalues[axis] - oracle[axis]).abs() < 1e-8);
        }
    }

    #[test]
    fn planar_points_reconstruct_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = [0.6, 0.0, 0.8, 0.0];
        let v = [0.0, 1.0, 0.0, 0.0];
        let coeffs: Vec<[f64; 2]> = (0..10)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let emb: Vec<Vec<f64>> = coeffs
            .iter()
            .map(|c| (0..4).map(|i| c[0] * u[i] + c[1] * v[i]).collect())
            .collect();
        let proj = project_2d(&emb).unwrap();
        assert_eq!(proj.rank, 2);
        // Distances within the plane are preserved by the projection.
        for i in 0..emb.len() {
            for j in 0..emb.len() {
                let d: f64 = emb[i]
                    .iter()
                    .zip(&emb[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let p = &proj.points;
                let dp = ((p[i][0] - p[j][0]).powi(2) + (p[i][1] - p[j][1]).powi(2)).sqrt();
                assert!((d - dp).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn duplicates_and_degenerate_clouds() {
        let base = vec![
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, -1.0],
            vec![2.0, 0.0, 1.0],
        ];
        let mut emb = base.clone();
        emb.extend(base.clone());
        let proj = project_2d(&emb).unwrap();
        for i in 0..3 {
            assert_eq!(proj.points[i], proj.points[i + 3]);
        }

        let line: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mods = vec![Modality::Rgb; 5];
        let proj = export_projection(&line, &[0, 1, 2, 3, 4], &mods, &path).unwrap();
        assert_eq!(proj.rank, 1);
        assert!(proj.points.iter().all(|p| p[1] == 0.0));
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with('#'));
        assert_eq!(text.lines().nth(1), Some("label,modality,x,y"));
        assert_eq!(text.lines().count(), 7);
        assert!(project_2d(&line[..2]).is_err());
    }
}
