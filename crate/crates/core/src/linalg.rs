//! Small dense vector helpers and spectral estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Outcome of a power iteration.
#[derive(Debug, Clone, Copy)]
pub struct PowerEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Largest eigenvalue of a symmetric positive semidefinite map `apply`
/// by power iteration from a seeded random start.
///
/// Stops when the relative change of the Rayleigh quotient drops below `tol`
/// or after `max_iter` iterations.
pub fn power_iteration<F>(dim: usize, mut apply: F, tol: f64, max_iter: usize, seed: u64) -> PowerEstimate
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return PowerEstimate { value: 0.0, iterations: 0, converged: true };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.5).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; dim];
    let mut lambda = 0.0;
    for it in 1..=max_iter {
        apply(&v, &mut w);
        let next = dot(&v, &w);
        let nw = norm(&w);
        if nw == 0.0 {
            return PowerEstimate { value: 0.0, iterations: it, converged: true };
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nw;
        }
        if it > 1 && (next - lambda).abs() <= tol * next.abs().max(f64::MIN_POSITIVE) {
            return PowerEstimate { value: next, iterations: it, converged: true };
        }
        lambda = next;
    }
    PowerEstimate { value: lambda, iterations: max_iter, converged: false }
}

/// Spectral norm `‖B‖₂` of a linear map given `B v` and `Bᵀ v`, via power
/// iteration on `BᵀB`.
pub fn spectral_norm<F, G>(
    rows: usize,
    cols: usize,
    mut apply: F,
    mut apply_t: G,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> PowerEstimate
where
    F: FnMut(&[f64], &mut [f64]),
    G: FnMut(&[f64], &mut [f64]),
{
    let mut tmp = vec![0.0; rows];
    let est = power_iteration(
        cols,
        |v, out| {
            apply(v, &mut tmp);
            apply_t(&tmp, out);
        },
        tol,
        max_iter,
        seed,
    );
    PowerEstimate { value: est.value.max(0.0).sqrt(), ..est }
}

/// Solves `M x = rhs` for a small dense symmetric positive definite `M`
/// (row-major), falling back to LU when Cholesky fails.
pub fn solve_dense(n: usize, m: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let b = nalgebra::DVector::from_column_slice(rhs);
    if let Some(ch) = mat.clone().cholesky() {
        return Some(ch.solve(&b).as_slice().to_vec());
    }
    mat.lu().solve(&b).map(|x| x.as_slice().to_vec())
}

/// Eigenvalues of a small dense symmetric matrix (row-major), ascending.
pub fn symmetric_eigenvalues(n: usize, m: &[f64]) -> Vec<f64> {
    let mat = nalgebra::DMatrix::from_row_slice(n, n, m);
    let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_iteration_diagonal() {
        let d = [3.0, 1.0, 0.5];
        let est = power_iteration(3, |v, o| o.iter_mut().zip(v).zip(&d).for_each(|((o, v), d)| *o = d * v), 1e-12, 10_000, 1);
        assert!(est.converged);
        assert!((est.value - 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_norm_of_rotation_scaled() {
        // 2x2 rotation scaled by 0.7
        let (c, s) = (0.3f64.cos() * 0.7, 0.3f64.sin() * 0.7);
        let a = [c, -s, s, c];
        let est = spectral_norm(
            2,
            2,
            |v, o| {
                o[0] = a[0] * v[0] + a[1] * v[1];
                o[1] = a[2] * v[0] + a[3] * v[1];
            },
            |v, o| {
                o[0] = a[0] * v[0] + a[2] * v[1];
                o[1] = a[1] * v[0] + a[3] * v[1];
            },
            1e-14,
            1000,
            3,
        );
        assert!((est.value - 0.7).abs() < 1e-9);
    }

    #[test]
    fn dense_solve_spd() {
        let m = [4.0, 1.0, 1.0, 3.0];
        let x = solve_dense(2, &m, &[1.0, 2.0]).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }
}
