//! Seeded synthetic fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CsrMatrix, LabeledDataset};
use crate::error::{Error, Result};

/// `A x* = b` with known solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSystem {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub x_star: Vec<f64>,
}

fn banded_offdiag(n: usize, bandwidth: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n.min(i + bandwidth + 1) {
            let v: f64 = rng.random_range(-1.0..1.0);
            t.push((i, j, v));
            t.push((j, i, v));
        }
    }
    t
}

fn assemble(n: usize, mut off: Vec<(usize, usize, f64)>, diag: f64, rng: &mut ChaCha8Rng) -> Result<LinearSystem> {
    off.extend((0..n).map(|i| (i, i, diag)));
    let a = CsrMatrix::from_triplets(n, n, &off)?;
    let x_star: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let b = a.mul(&x_star);
    Ok(LinearSystem { a, b, x_star })
}

/// Symmetric banded system with constant diagonal equal to 1.25 times the
/// largest off-diagonal absolute row sum, so the Jacobi iteration matrix
/// has `‖M‖₂ ≤ 0.8`.
pub fn gen_diag_dominant(n: usize, bandwidth: usize, seed: u64) -> Result<LinearSystem> {
    if n == 0 {
        return Err(Error::invalid("system size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off = banded_offdiag(n, bandwidth, &mut rng);
    let mut row_sum = vec![0.0f64; n];
    for (i, _, v) in &off {
        row_sum[*i] += v.abs();
    }
    let max_sum = row_sum.iter().copied().fold(0.0, f64::max);
    let diag = if max_sum > 0.0 { 1.25 * max_sum } else { 1.0 };
    assemble(n, off, diag, &mut rng)
}

/// Like [`gen_diag_dominant`] but with the constant diagonal chosen so the
/// Jacobi iteration matrix has spectral norm `target` (as estimated by power
/// iteration). `target < 1` keeps the system diagonally dominant in the
/// spectral sense only.
pub fn gen_jacobi_system(n: usize, bandwidth: usize, seed: u64, target: f64) -> Result<LinearSystem> {
    if n == 0 || !(target > 0.0 && target < 1.0) {
        return Err(Error::invalid("need n >= 1 and target norm in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off = banded_offdiag(n, bandwidth, &mut rng);
    let r = CsrMatrix::from_triplets(n, n, &off)?;
    let est = r.spectral_norm(1e-12, 100_000, seed ^ 0x5eed);
    let diag = if est.value > 0.0 { est.value / target } else { 1.0 };
    assemble(n, off, diag, &mut rng)
}

/// Dense logistic-regression samples whose features span a `rank`
/// dimensional subspace, rows scaled to unit norm, labels
/// `sign(a·w + noise)`. With `n_samples` well above `rank` and unit noise the
/// classes overlap, so the unregularised loss has a finite minimiser on the
/// feature span.
pub fn gen_logistic(n_samples: usize, n_features: usize, rank: usize, seed: u64) -> Result<LabeledDataset> {
    if n_samples == 0 || n_features == 0 || rank == 0 || rank > n_features {
        return Err(Error::invalid("need positive sizes and 1 <= rank <= n_features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let v: Vec<f64> = (0..n_features * rank).map(|_| normal()).collect();
    let w_latent: Vec<f64> = (0..rank).map(|_| normal()).collect();
    let mut dense = vec![0.0; n_samples * n_features];
    let mut margins = vec![0.0; n_samples];
    for r in 0..n_samples {
        let z: Vec<f64> = (0..rank).map(|_| normal()).collect();
        let row = &mut dense[r * n_features..(r + 1) * n_features];
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = (0..rank).map(|k| z[k] * v[c * rank + k]).sum();
        }
        let nrm = crate::linalg::norm(row);
        row.iter_mut().for_each(|x| *x /= nrm);
        margins[r] = z.iter().zip(&w_latent).map(|(a, b)| a * b).sum::<f64>() / nrm;
    }
    let sd = (margins.iter().map(|m| m * m).sum::<f64>() / n_samples as f64).sqrt().max(f64::MIN_POSITIVE);
    let labels = margins.iter().map(|m| if m / sd + normal() >= 0.0 { 1.0 } else { -1.0 }).collect();
    LabeledDataset::new(CsrMatrix::from_dense(n_samples, n_features, &dense)?, labels)
}

/// Sparse samples with density `density` per entry, except that the first
/// `heavy_cols` columns are `heavy_factor` times denser (capped at 1).
/// Labels are random. Used to build deliberately unbalanced block workloads.
pub fn gen_sparse_logistic(
    n_samples: usize,
    n_features: usize,
    density: f64,
    heavy_cols: usize,
    heavy_factor: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(density > 0.0 && density <= 1.0) || heavy_cols > n_features {
        return Err(Error::invalid("density must lie in (0, 1] and heavy_cols <= n_features"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for r in 0..n_samples {
        for c in 0..n_features {
            let d = if c < heavy_cols { (density * heavy_factor).min(1.0) } else { density };
            if rng.random::<f64>() < d {
                let v: f64 = StandardNormal.sample(&mut rng);
                t.push((r, c, v));
            }
        }
    }
    let labels = (0..n_samples).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    LabeledDataset::new(CsrMatrix::from_triplets(n_samples, n_features, &t)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jacobi_norm(sys: &LinearSystem) -> f64 {
        let n = sys.a.rows();
        let d = sys.a.diagonal();
        let apply = |v: &[f64], o: &mut [f64]| {
            for i in 0..n {
                let (idx, val) = sys.a.row(i);
                let s: f64 = idx.iter().zip(val).filter(|(c, _)| **c != i).map(|(c, a)| a * v[*c]).sum();
                o[i] = -s / d[i];
            }
        };
        crate::linalg::spectral_norm(n, n, apply, apply, 1e-12, 100_000, 11).value
    }

    #[test]
    fn scalar_system() {
        let s = gen_diag_dominant(1, 5, 3).unwrap();
        assert_eq!(s.a.nnz(), 1);
        assert_eq!(s.b[0], s.a.get(0, 0) * s.x_star[0]);
    }

    #[test]
    fn banded_dominant_contracts() {
        let s = gen_diag_dominant(100, 5, 7).unwrap();
        assert!(s.a.is_symmetric(0.0));
        for i in 0..100 {
            let (idx, val) = s.a.row(i);
            let off: f64 = idx.iter().zip(val).filter(|(c, _)| **c != i).map(|(_, v)| v.abs()).sum();
            assert!(s.a.get(i, i) > off);
        }
        assert!(jacobi_norm(&s) < 1.0);
        let r = s.a.mul(&s.x_star);
        assert!(r.iter().zip(&s.b).all(|(x, y)| x == y));
    }

    #[test]
    fn targeted_norm() {
        let s = gen_jacobi_system(40, 3, 9, 0.5).unwrap();
        assert!((jacobi_norm(&s) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn logistic_shape_and_determinism() {
        let a = gen_logistic(50, 20, 5, 1).unwrap();
        let b = gen_logistic(50, 20, 5, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_samples(), 50);
        assert!(a.labels.iter().any(|l| *l > 0.0) && a.labels.iter().any(|l| *l < 0.0));
        for r in 0..50 {
            assert!((crate::linalg::norm(a.samples.row(r).1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn heavy_columns_denser() {
        let ds = gen_sparse_logistic(400, 100, 0.01, 2, 50.0, 4).unwrap();
        let t = ds.samples.transpose();
        let heavy = t.row(0).0.len() + t.row(1).0.len();
        let light: usize = (2..100).map(|c| t.row(c).0.len()).sum::<usize>();
        assert!(heavy as f64 / 2.0 > 10.0 * light as f64 / 98.0);
    }
}
