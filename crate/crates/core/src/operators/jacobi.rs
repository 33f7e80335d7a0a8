use crate::data::CsrMatrix;
use crate::error::{ensure_finite, Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};

/// Jacobi splitting for `Ax = b`: `T x = D⁻¹(b - Rx)` with `D = diag(A)`,
/// `R = A - D`, so `(S x)_j = (Σ_k a_jk x_k - b_j) / a_jj`.
#[derive(Debug, Clone)]
pub struct JacobiOp {
    a: CsrMatrix,
    b: Vec<f64>,
    inv_diag: Vec<f64>,
    layout: BlockLayout,
    m_norm: f64,
}

impl JacobiOp {
    /// Scalar blocks. Estimates `‖M‖₂` of `M = -D⁻¹R` by power iteration and
    /// logs a warning when it exceeds 1 (the operator may then be expansive).
    pub fn new(a: CsrMatrix, b: Vec<f64>) -> Result<Self> {
        let n = a.rows();
        Self::with_layout(a, b, BlockLayout::scalar(n))
    }

    pub fn with_layout(a: CsrMatrix, b: Vec<f64>, layout: BlockLayout) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::invalid(format!("Jacobi needs a square matrix, got {}x{}", a.rows(), a.cols())));
        }
        if b.len() != a.rows() {
            return Err(Error::DimensionMismatch { expected: a.rows(), got: b.len() });
        }
        if layout.dim() != a.rows() {
            return Err(Error::DimensionMismatch { expected: a.rows(), got: layout.dim() });
        }
        ensure_finite("right-hand side", &b)?;
        let diag = a.diagonal();
        if let Some(j) = diag.iter().position(|d| *d == 0.0) {
            return Err(Error::invalid(format!("zero diagonal entry at row {j}")));
        }
        let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
        let mut op = JacobiOp { a, b, inv_diag, layout, m_norm: f64::NAN };
        op.m_norm = op.estimate_m_norm(1e-8, 10_000, 0x4a61);
        if op.m_norm > 1.0 {
            log::warn!("Jacobi iteration matrix has estimated norm {:.6} > 1; T may be expansive", op.m_norm);
        }
        Ok(op)
    }

    fn apply_m(&self, v: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let (idx, val) = self.a.row(j);
            let s: f64 = idx.iter().zip(val).filter(|(c, _)| **c != j).map(|(c, a)| a * v[*c]).sum();
            *o = -s * self.inv_diag[j];
        }
    }

    /// Power-method estimate of `‖M‖₂` (via `MᵀM`, so nonsymmetric `A` is fine).
    pub fn estimate_m_norm(&self, tol: f64, max_iter: usize, seed: u64) -> f64 {
        let n = self.a.rows();
        let mt = |v: &[f64], out: &mut [f64]| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for j in 0..n {
                let (idx, val) = self.a.row(j);
                for (c, a) in idx.iter().zip(val) {
                    if *c != j {
                        out[*c] -= a * self.inv_diag[j] * v[j];
                    }
                }
            }
        };
        crate::linalg::spectral_norm(n, n, |v, o| self.apply_m(v, o), mt, tol, max_iter, seed).value
    }

    /// The cached `‖M‖₂` estimate.
    pub fn m_norm(&self) -> f64 {
        self.m_norm
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    /// `‖Ax - b‖`.
    pub fn linear_residual(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul(x);
        ax.iter().zip(&self.b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    }

    /// `(S x̂)_i` for block `i`.
    pub fn jacobi_block<X: StateView + ?Sized>(&self, i: usize, xhat: &X) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.block_size(i)];
        self.eval_s_block(i, xhat, &[][..], &mut out);
        out
    }
}

impl ProblemOperator for JacobiOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "jacobi"
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        for (o, j) in out.iter_mut().zip(self.layout.block(i)) {
            let (idx, val) = self.a.row(j);
            let ax: f64 = idx.iter().zip(val).map(|(c, a)| a * x.get(*c)).sum();
            *o = (ax - self.b[j]) * self.inv_diag[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::km_step;

    fn two_by_two() -> JacobiOp {
        let a = CsrMatrix::from_dense(2, 2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        JacobiOp::new(a, vec![3.0, 3.0]).unwrap()
    }

    #[test]
    fn hand_examples() {
        let op = two_by_two();
        assert_eq!(op.jacobi_block(0, &[0.0, 0.0][..]), vec![-1.5]);
        assert_eq!(op.jacobi_block(1, &[1.0, 1.0][..]), vec![0.0]);
        assert_eq!(km_step(&[0.0, 0.0], 0.5, &op).unwrap(), vec![0.75, 0.75]);
        assert!((op.m_norm() - 0.5).abs() < 1e-8);

        let id = JacobiOp::new(CsrMatrix::identity(3), vec![0.0; 3]).unwrap();
        assert_eq!(id.jacobi_block(0, &[1.0, 0.0, 0.0][..]), vec![1.0]);
    }

    #[test]
    fn zero_diagonal_rejected() {
        let a = CsrMatrix::from_dense(2, 2, &[0.0, 1.0, 1.0, 2.0]).unwrap();
        assert!(JacobiOp::new(a, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn blocked_layout_matches_scalar() {
        let sys = crate::data::gen_diag_dominant(12, 2, 4).unwrap();
        let scalar = JacobiOp::new(sys.a.clone(), sys.b.clone()).unwrap();
        let blocked =
            JacobiOp::with_layout(sys.a, sys.b, BlockLayout::from_sizes(&[5, 4, 3]).unwrap()).unwrap();
        let x: Vec<f64> = (0..12).map(|j| (j as f64).sin()).collect();
        assert_eq!(scalar.eval_s_full(&x), blocked.eval_s_full(&x));
        assert!(scalar.fixed_point_residual(&sys.x_star) < 1e-12);
    }
}
