use crate::data::{CsrMatrix, LabeledDataset};
use crate::error::{Error, Result};
use crate::fixpoint::StateView;

/// A differentiable convex function with coordinate-wise gradient access.
///
/// Functions that need a global aggregate (such as `Ax`) declare an
/// auxiliary vector; it is a linear function of `x` and is kept current by
/// the caller through [`SmoothPart::aux_delta`].
pub trait SmoothPart: Send + Sync {
    fn dim(&self) -> usize;

    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;

    fn value(&self, x: &[f64]) -> f64;

    fn aux_len(&self) -> usize {
        0
    }

    fn init_aux(&self, _x: &[f64], _aux: &mut [f64]) {}

    fn aux_delta<F: FnMut(usize, f64)>(&self, _j: usize, _dx: f64, _emit: &mut F) {}

    /// `∂f/∂x_j`.
    fn grad_coord<X, A>(&self, j: usize, x: &X, aux: &A) -> f64
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized;

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut aux = vec![0.0; self.aux_len()];
        self.init_aux(x, &mut aux);
        (0..self.dim()).map(|j| self.grad_coord(j, x, aux.as_slice())).collect()
    }
}

/// `½ xᵀPx - qᵀx` with symmetric positive semidefinite `P`.
#[derive(Debug, Clone)]
pub struct QuadraticLoss {
    p: CsrMatrix,
    q: Vec<f64>,
    l: f64,
}

impl QuadraticLoss {
    /// `L` is estimated as `‖P‖₂` by power iteration.
    pub fn new(p: CsrMatrix, q: Vec<f64>) -> Result<Self> {
        if p.rows() != p.cols() || q.len() != p.rows() {
            return Err(Error::DimensionMismatch { expected: p.rows(), got: q.len() });
        }
        if !p.is_symmetric(1e-12) {
            return Err(Error::invalid("quadratic term must be symmetric"));
        }
        let l = p.spectral_norm(1e-12, 100_000, 0x9a).value;
        Ok(QuadraticLoss { p, q, l })
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.l = l;
        self
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn linear(&self) -> &[f64] {
        &self.q
    }
}

impl SmoothPart for QuadraticLoss {
    fn dim(&self) -> usize {
        self.q.len()
    }

    fn lipschitz(&self) -> f64 {
        self.l
    }

    fn value(&self, x: &[f64]) -> f64 {
        let px = self.p.mul(x);
        0.5 * crate::linalg::dot(x, &px) - crate::linalg::dot(&self.q, x)
    }

    fn grad_coord<X, A>(&self, j: usize, x: &X, _aux: &A) -> f64
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let (idx, val) = self.p.row(j);
        idx.iter().zip(val).map(|(c, v)| v * x.get(*c)).sum::<f64>() - self.q[j]
    }
}

/// `(1/N) Σ_r log(1 + exp(-b_r a_rᵀx))`, with the auxiliary vector `Ax`.
#[derive(Debug, Clone)]
pub struct LogisticLoss {
    a: CsrMatrix,
    a_t: CsrMatrix,
    labels: Vec<f64>,
    l: f64,
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn log1pexp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticLoss {
    /// `L = ‖A‖₂² / (4N)` with `‖A‖₂` from 50 power iterations.
    pub fn new(ds: &LabeledDataset) -> Self {
        let n = ds.n_samples().max(1) as f64;
        let norm = ds.samples.spectral_norm(0.0, 50, 0x106).value;
        LogisticLoss {
            a: ds.samples.clone(),
            a_t: ds.samples.transpose(),
            labels: ds.labels.clone(),
            l: norm * norm / (4.0 * n),
        }
    }

    pub fn samples(&self) -> &CsrMatrix {
        &self.a
    }

    /// Columns of `A`, stored as rows of `Aᵀ`.
    pub fn columns(&self) -> &CsrMatrix {
        &self.a_t
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

impl SmoothPart for LogisticLoss {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn lipschitz(&self) -> f64 {
        self.l
    }

    fn value(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul(x);
        let n = self.labels.len() as f64;
        ax.iter().zip(&self.labels).map(|(m, b)| log1pexp(-b * m)).sum::<f64>() / n
    }

    fn aux_len(&self) -> usize {
        self.a.rows()
    }

    fn init_aux(&self, x: &[f64], aux: &mut [f64]) {
        self.a.mul_vec(x, aux);
    }

    fn aux_delta<F: FnMut(usize, f64)>(&self, j: usize, dx: f64, emit: &mut F) {
        let (rows, vals) = self.a_t.row(j);
        for (r, v) in rows.iter().zip(vals) {
            emit(*r, v * dx);
        }
    }

    fn grad_coord<X, A>(&self, j: usize, _x: &X, aux: &A) -> f64
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let (rows, vals) = self.a_t.row(j);
        let mut g = 0.0;
        for (r, v) in rows.iter().zip(vals) {
            let b = self.labels[*r];
            g -= b * v * sigmoid(-b * aux.get(*r));
        }
        g / self.labels.len() as f64
    }
}

/// `Σ_k ½ w_k (a_kᵀ x - c_k)²` where each `a_k` touches only a few
/// coordinates. The gradient of coordinate `j` reads only the terms whose
/// support contains `j`, and only the coordinates of those supports.
#[derive(Debug, Clone)]
pub struct SparseSumLoss {
    terms: CsrMatrix,
    by_coord: CsrMatrix,
    targets: Vec<f64>,
    weights: Vec<f64>,
    l: f64,
}

impl SparseSumLoss {
    pub fn new(terms: CsrMatrix, targets: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if targets.len() != terms.rows() || weights.len() != terms.rows() {
            return Err(Error::DimensionMismatch { expected: terms.rows(), got: targets.len().min(weights.len()) });
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::invalid("term weights must be positive"));
        }
        let mut scaled = Vec::with_capacity(terms.nnz());
        for r in 0..terms.rows() {
            let s = weights[r].sqrt();
            let (idx, val) = terms.row(r);
            scaled.extend(idx.iter().zip(val).map(|(c, v)| (r, *c, v * s)));
        }
        let w_half = CsrMatrix::from_triplets(terms.rows(), terms.cols(), &scaled)?;
        let norm = w_half.spectral_norm(1e-12, 100_000, 0x55).value;
        Ok(SparseSumLoss { by_coord: terms.transpose(), terms, targets, weights, l: norm * norm })
    }

    /// Indices of the terms that involve coordinate `j`.
    pub fn terms_touching(&self, j: usize) -> &[usize] {
        self.by_coord.row(j).0
    }
}

impl SmoothPart for SparseSumLoss {
    fn dim(&self) -> usize {
        self.terms.cols()
    }

    fn lipschitz(&self) -> f64 {
        self.l
    }

    fn value(&self, x: &[f64]) -> f64 {
        let r = self.terms.mul(x);
        r.iter().zip(&self.targets).zip(&self.weights).map(|((v, c), w)| 0.5 * w * (v - c) * (v - c)).sum()
    }

    fn grad_coord<X, A>(&self, j: usize, x: &X, _aux: &A) -> f64
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let (ks, ajk) = self.by_coord.row(j);
        let mut g = 0.0;
        for (k, a) in ks.iter().zip(ajk) {
            let (idx, val) = self.terms.row(*k);
            let r: f64 = idx.iter().zip(val).map(|(c, v)| v * x.get(*c)).sum::<f64>() - self.targets[*k];
            g += self.weights[*k] * a * r;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff<G: SmoothPart>(g: &G, x: &[f64], j: usize) -> f64 {
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        (g.value(&xp) - g.value(&xm)) / (2.0 * h)
    }

    #[test]
    fn logistic_gradient_matches_finite_difference() {
        let ds = crate::data::gen_logistic(30, 8, 4, 2).unwrap();
        let g = LogisticLoss::new(&ds);
        let x: Vec<f64> = (0..8).map(|j| 0.3 * (j as f64 - 3.5)).collect();
        let grad = g.gradient(&x);
        for j in 0..8 {
            assert!((grad[j] - finite_diff(&g, &x, j)).abs() < 1e-8);
        }
    }

    #[test]
    fn logistic_single_sample() {
        let a = CsrMatrix::from_dense(1, 1, &[1.0]).unwrap();
        let ds = LabeledDataset::new(a, vec![1.0]).unwrap();
        let g = LogisticLoss::new(&ds);
        assert_eq!(g.gradient(&[0.0]), vec![-0.5]);
        assert!((g.lipschitz() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn logistic_aux_tracks_product() {
        let ds = crate::data::gen_logistic(20, 6, 3, 5).unwrap();
        let g = LogisticLoss::new(&ds);
        let mut x = vec![0.1; 6];
        let mut aux = vec![0.0; 20];
        g.init_aux(&x, &mut aux);
        g.aux_delta(2, 0.7, &mut |r, v| aux[r] += v);
        x[2] += 0.7;
        let fresh = ds.samples.mul(&x);
        for (a, b) in aux.iter().zip(&fresh) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sparse_sum_gradient() {
        let terms = CsrMatrix::from_dense(2, 4, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0]).unwrap();
        let g = SparseSumLoss::new(terms, vec![1.0, 0.5], vec![1.0, 2.0]).unwrap();
        let x = [0.3, -0.2, 0.7, 0.1];
        for j in 0..4 {
            assert!((g.gradient(&x)[j] - finite_diff(&g, &x, j)).abs() < 1e-8);
        }
        assert_eq!(g.terms_touching(0), &[0]);
        assert_eq!(g.terms_touching(3), &[1]);
    }

    #[test]
    fn quadratic_gradient() {
        let p = CsrMatrix::from_dense(2, 2, &[2.0, 1.0, 1.0, 3.0]).unwrap();
        let g = QuadraticLoss::new(p, vec![1.0, 0.0]).unwrap();
        assert_eq!(g.gradient(&[1.0, 1.0]), vec![2.0, 4.0]);
        let l = (5.0 + 5f64.sqrt()) / 2.0;
        assert!((g.lipschitz() - l).abs() < 1e-9);
    }
}
