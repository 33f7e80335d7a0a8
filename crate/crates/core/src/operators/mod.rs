//! Concrete fixed-point operators.

mod admm;
mod consensus;
mod decentral;
mod fbs;
mod grad;
mod jacobi;
mod prs;
mod smooth;

pub use admm::{AdmmDualOp, DualPiece, PieceKind};
pub use consensus::ConsensusAdmmOp;
pub use decentral::{
    decentral_grad_step, metropolis_weights, ActivationMode, DecentralAdmmOp, DecentralGradOp, PoissonClocks,
};
pub use fbs::FbsOp;
pub use grad::GradOp;
pub use jacobi::JacobiOp;
pub use prs::{ConvexSet, PrsFeasibilityOp};
pub use smooth::{LogisticLoss, QuadraticLoss, SmoothPart, SparseSumLoss};

use serde::{Deserialize, Serialize};

/// `sign(v)·max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Separable convex term `f(x) = Σ f_j(x_j)` with a closed-form prox.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    None,
    /// `λ‖x‖₁`
    L1(f64),
    /// Indicator of `[lo, hi]` in every coordinate.
    Box(f64, f64),
}

impl Regularizer {
    /// `prox_{γ f_j}(v)`.
    #[inline]
    pub fn prox(&self, v: f64, gamma: f64) -> f64 {
        match *self {
            Regularizer::None => v,
            Regularizer::L1(l) => soft_threshold(v, gamma * l),
            Regularizer::Box(lo, hi) => v.clamp(lo, hi),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Regularizer::None => 0.0,
            Regularizer::L1(l) => l * x.iter().map(|v| v.abs()).sum::<f64>(),
            Regularizer::Box(lo, hi) => {
                if x.iter().all(|v| (lo..=hi).contains(v)) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }
}

/// Local objective `½ a ‖x - c‖²` held by one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadLocal {
    pub a: f64,
    pub c: Vec<f64>,
}

impl QuadLocal {
    pub fn new(a: f64, c: Vec<f64>) -> crate::Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(crate::Error::invalid(format!("local curvature must be positive, got {a}")));
        }
        crate::error::ensure_finite("local centre", &c)?;
        Ok(QuadLocal { a, c })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.a * crate::linalg::dist_sq(x, &self.c)
    }

    /// `argmin_x ½a‖x - c‖² - ⟨v, x⟩ + (ρ/2)‖x‖²`, written to `out`.
    pub fn ridge_argmin(&self, v: &[f64], rho: f64, out: &mut [f64]) {
        let d = self.a + rho;
        for ((o, vi), ci) in out.iter_mut().zip(v).zip(&self.c) {
            *o = (self.a * ci + vi) / d;
        }
    }

    /// Minimiser of `Σ_i ½a_i‖x - c_i‖²`.
    pub fn centralized_minimizer(locals: &[QuadLocal]) -> Vec<f64> {
        let d = locals[0].c.len();
        let total: f64 = locals.iter().map(|l| l.a).sum();
        (0..d).map(|k| locals.iter().map(|l| l.a * l.c[k]).sum::<f64>() / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_dead_zone() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-0.5, 0.5), 0.0);
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
    }

    #[test]
    fn ridge_argmin_stationary() {
        let l = QuadLocal::new(2.0, vec![1.0, -1.0]).unwrap();
        let v = [0.5, 0.25];
        let mut x = [0.0; 2];
        l.ridge_argmin(&v, 3.0, &mut x);
        for k in 0..2 {
            let g = 2.0 * (x[k] - l.c[k]) - v[k] + 3.0 * x[k];
            assert!(g.abs() < 1e-14);
        }
    }
}
