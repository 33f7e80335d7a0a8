use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};
use crate::linalg::{dot, norm_sq};

/// Closed convex set with an exact projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexSet {
    /// `{x : aᵀx ≤ c}`
    Halfspace { a: Vec<f64>, c: f64 },
    /// `{x : lo ≤ x ≤ hi}` componentwise
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{x : ‖x - center‖ ≤ radius}`
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexSet {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Halfspace { a, .. } => a.len(),
            ConvexSet::Box { lo, .. } => lo.len(),
            ConvexSet::Ball { center, .. } => center.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ConvexSet::Halfspace { a, c } => {
                if norm_sq(a) == 0.0 || !c.is_finite() {
                    return Err(Error::invalid("halfspace normal must be nonzero"));
                }
            }
            ConvexSet::Box { lo, hi } => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::invalid("box bounds must satisfy lo <= hi"));
                }
            }
            ConvexSet::Ball { radius, .. } => {
                if !(*radius >= 0.0) {
                    return Err(Error::invalid("ball radius must be nonnegative"));
                }
            }
        }
        Ok(())
    }

    pub fn project(&self, v: &[f64], out: &mut [f64]) {
        match self {
            ConvexSet::Halfspace { a, c } => {
                let excess = dot(a, v) - c;
                let t = if excess > 0.0 { excess / norm_sq(a) } else { 0.0 };
                for ((o, vi), ai) in out.iter_mut().zip(v).zip(a) {
                    *o = vi - t * ai;
                }
            }
            ConvexSet::Box { lo, hi } => {
                for (((o, vi), l), h) in out.iter_mut().zip(v).zip(lo).zip(hi) {
                    *o = vi.clamp(*l, *h);
                }
            }
            ConvexSet::Ball { center, radius } => {
                let d = crate::linalg::dist_sq(v, center).sqrt();
                let s = if d > *radius { radius / d } else { 1.0 };
                for ((o, vi), ci) in out.iter_mut().zip(v).zip(center) {
                    *o = ci + s * (vi - ci);
                }
            }
        }
    }

    /// Amount by which `x` lies outside the set (0 inside).
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            ConvexSet::Halfspace { a, c } => (dot(a, x) - c).max(0.0) / norm_sq(a).sqrt(),
            ConvexSet::Box { lo, hi } => x
                .iter()
                .zip(lo)
                .zip(hi)
                .map(|((v, l), h)| (l - v).max(v - h).max(0.0))
                .fold(0.0, f64::max),
            ConvexSet::Ball { center, radius } => (crate::linalg::dist_sq(x, center).sqrt() - radius).max(0.0),
        }
    }
}

/// Peaceman–Rachford splitting for finding a point in `∩ C_i`.
///
/// The state is `z = (z_1, …, z_m)`, one copy per set, and the auxiliary
/// vector is the running mean `z̄`. Then
/// `(S z)_i = 2 (z̄ - Proj_{C_i}(2 z̄ - z_i))` and the solution is `z̄`.
#[derive(Debug, Clone)]
pub struct PrsFeasibilityOp {
    sets: Vec<ConvexSet>,
    d: usize,
    layout: BlockLayout,
}

impl PrsFeasibilityOp {
    pub fn new(sets: Vec<ConvexSet>) -> Result<Self> {
        let d = sets.first().map(|s| s.dim()).ok_or_else(|| Error::invalid("need at least one set"))?;
        for s in &sets {
            if s.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
            }
            s.validate()?;
        }
        let layout = BlockLayout::uniform(sets.len(), d);
        Ok(PrsFeasibilityOp { sets, d, layout })
    }

    pub fn sets(&self) -> &[ConvexSet] {
        &self.sets
    }

    pub fn point_dim(&self) -> usize {
        self.d
    }

    /// `x* = z̄`, the point recovered from a fixed point `z*`.
    pub fn recover(&self, z: &[f64]) -> Vec<f64> {
        self.compute_aux(z)
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.sets.iter().map(|s| s.violation(x)).fold(0.0, f64::max)
    }

    /// `2η (Proj_{C_i}(2 z̄̂ - ẑ_i) - z̄̂)`, the increment to `z_i`.
    pub fn prs_block(&self, i: usize, zhat_i: &[f64], zbar_hat: &[f64], eta: f64) -> Vec<f64> {
        let v: Vec<f64> = zbar_hat.iter().zip(zhat_i).map(|(b, z)| 2.0 * b - z).collect();
        let mut p = vec![0.0; self.d];
        self.sets[i].project(&v, &mut p);
        p.iter().zip(zbar_hat).map(|(y, b)| 2.0 * eta * (y - b)).collect()
    }
}

impl ProblemOperator for PrsFeasibilityOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "prs_feasibility"
    }

    fn aux_len(&self) -> usize {
        self.d
    }

    fn init_aux(&self, x: &[f64], aux: &mut [f64]) {
        aux.iter_mut().for_each(|a| *a = 0.0);
        for block in x.chunks(self.d) {
            for (a, v) in aux.iter_mut().zip(block) {
                *a += v;
            }
        }
        let m = self.sets.len() as f64;
        aux.iter_mut().for_each(|a| *a /= m);
    }

    fn aux_delta<F: FnMut(usize, f64)>(&self, _i: usize, delta: &[f64], mut emit: F) {
        let m = self.sets.len() as f64;
        for (k, d) in delta.iter().enumerate() {
            emit(k, d / m);
        }
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let mut zi = vec![0.0; self.d];
        x.read_range(self.layout.block(i), &mut zi);
        let mut zbar = vec![0.0; self.d];
        aux.read_range(0..self.d, &mut zbar);
        let v: Vec<f64> = zbar.iter().zip(&zi).map(|(b, z)| 2.0 * b - z).collect();
        self.sets[i].project(&v, out);
        for (o, b) in out.iter_mut().zip(&zbar) {
            *o = 2.0 * (b - *o);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(lo: f64, hi: f64) -> ConvexSet {
        ConvexSet::Box { lo: vec![lo], hi: vec![hi] }
    }

    #[test]
    fn two_intervals() {
        let op = PrsFeasibilityOp::new(vec![interval(0.0, 1.0), interval(1.0, 2.0)]).unwrap();
        let z = [0.0, 2.0];
        let zbar = op.compute_aux(&z);
        assert_eq!(zbar, vec![1.0]);
        assert_eq!(op.prs_block(0, &z[0..1], &zbar, 0.7), vec![0.0]);
        let s = op.eval_s_full(&z);
        assert_eq!(s[0], 0.0);
    }

    #[test]
    fn consensual_feasible_is_fixed() {
        let h = ConvexSet::Halfspace { a: vec![1.0, 1.0], c: 1.0 };
        let op = PrsFeasibilityOp::new(vec![h.clone(), h.clone(), h]).unwrap();
        let z = [0.2, 0.3, 0.2, 0.3, 0.2, 0.3];
        assert!(op.eval_s_full(&z).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn projections() {
        let mut out = [0.0; 2];
        ConvexSet::Halfspace { a: vec![0.0, 2.0], c: 2.0 }.project(&[3.0, 5.0], &mut out);
        assert_eq!(out, [3.0, 1.0]);
        ConvexSet::Ball { center: vec![0.0, 0.0], radius: 1.0 }.project(&[3.0, 4.0], &mut out);
        assert!((out[0] - 0.6).abs() < 1e-15 && (out[1] - 0.8).abs() < 1e-15);
        assert!(ConvexSet::Ball { center: vec![0.0], radius: 1.0 }.violation(&[3.0]) == 2.0);
    }

    #[test]
    fn mean_delta_matches_recompute() {
        let op = PrsFeasibilityOp::new(vec![interval(0.0, 1.0), interval(0.5, 2.0), interval(-1.0, 0.7)]).unwrap();
        let mut z = vec![0.3, -0.4, 1.9];
        let mut zbar = op.compute_aux(&z);
        let delta = op.prs_block(1, &z[1..2], &zbar, 0.5);
        z[1] += delta[0];
        op.aux_delta(1, &delta, |k, v| zbar[k] += v);
        assert!((zbar[0] - op.compute_aux(&z)[0]).abs() < 1e-15);
    }
}
