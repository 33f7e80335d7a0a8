use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ProblemOperator;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sq, sub};

/// Outcome of a sampled cocoercivity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CocoercivityReport {
    pub samples: usize,
    /// Smallest `⟨x-y, Sx-Sy⟩ - ½‖Sx-Sy‖²` seen.
    pub worst_margin: f64,
    /// Smallest margin after adding the size-scaled tolerance.
    pub worst_scaled: f64,
    pub violations: usize,
}

impl CocoercivityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples pairs `x, y` with standard normal entries scaled by `scale` and
/// checks `⟨x-y, Sx-Sy⟩ ≥ ½‖Sx-Sy‖²` up to `1e-9 (1 + ‖x-y‖²)`.
pub fn check_cocoercivity<O: ProblemOperator, R: Rng + ?Sized>(
    op: &O,
    samples: usize,
    scale: f64,
    rng: &mut R,
) -> CocoercivityReport {
    let n = op.dim();
    check_cocoercivity_with(op, samples, rng, |r| {
        (0..n).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
    })
}

/// [`check_cocoercivity`] with a caller-supplied point sampler.
pub fn check_cocoercivity_with<O, R, F>(op: &O, samples: usize, rng: &mut R, mut draw: F) -> CocoercivityReport
where
    O: ProblemOperator,
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> Vec<f64>,
{
    let mut worst_margin = f64::INFINITY;
    let mut worst_scaled = f64::INFINITY;
    let mut violations = 0;
    for _ in 0..samples {
        let x = draw(rng);
        let y = draw(rng);
        let d = sub(&x, &y);
        let ds = sub(&op.eval_s_full(&x), &op.eval_s_full(&y));
        let margin = dot(&d, &ds) - 0.5 * norm_sq(&ds);
        let scaled = margin + 1e-9 * (1.0 + norm_sq(&d));
        worst_margin = worst_margin.min(margin);
        worst_scaled = worst_scaled.min(scaled);
        if scaled < 0.0 || !margin.is_finite() {
            violations += 1;
        }
    }
    CocoercivityReport { samples, worst_margin, worst_scaled, violations }
}

/// Lipschitz modulus `√(1 - 2γμ + μγ²L)` of `I - γ∇g` towards the minimiser
/// for `μ`-strongly convex, `L`-smooth `g`.
pub fn quasi_contraction_modulus(gamma: f64, mu: f64, l: f64) -> Result<f64> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::invalid(format!("L must be positive, got {l}")));
    }
    if !(gamma > 0.0 && gamma < 2.0 / l) {
        return Err(Error::invalid(format!("gamma must lie in (0, 2/L) = (0, {}), got {gamma}", 2.0 / l)));
    }
    if !(mu > 0.0 && mu <= l) {
        return Err(Error::invalid(format!("mu must lie in (0, L], got {mu}")));
    }
    Ok((1.0 - 2.0 * gamma * mu + mu * gamma * gamma * l).max(0.0).sqrt())
}

/// `I - T` is `(1 - c)`-strongly monotone when `T` is `c`-Lipschitz.
pub fn strong_monotonicity_from_lipschitz(c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::invalid(format!("Lipschitz constant must lie in [0, 1), got {c}")));
    }
    Ok(1.0 - c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{BlockLayout, StateView};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Scale(BlockLayout, f64);

    impl ProblemOperator for Scale {
        fn layout(&self) -> &BlockLayout {
            &self.0
        }
        fn name(&self) -> &str {
            "scale"
        }
        fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
        where
            X: StateView + ?Sized,
            A: StateView + ?Sized,
        {
            out[0] = (1.0 - self.1) * x.get(i);
        }
    }

    /// Projection onto `{x : x_0 + x_1 ≤ 1}`.
    struct HalfPlane(BlockLayout);

    impl ProblemOperator for HalfPlane {
        fn layout(&self) -> &BlockLayout {
            &self.0
        }
        fn name(&self) -> &str {
            "halfplane"
        }
        fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
        where
            X: StateView + ?Sized,
            A: StateView + ?Sized,
        {
            let viol = (x.get(0) + x.get(1) - 1.0).max(0.0);
            // S = x - P(x) = viol·a/‖a‖² with a = (1, 1)
            let _ = i;
            out[0] = viol / 2.0;
        }
    }

    #[test]
    fn identity_margin_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = check_cocoercivity(&Scale(BlockLayout::scalar(4), 1.0), 100, 1.0, &mut rng);
        assert!(r.passed());
        assert_eq!(r.worst_margin, 0.0);
    }

    #[test]
    fn projection_passes_expansion_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = check_cocoercivity(&HalfPlane(BlockLayout::scalar(2)), 2000, 3.0, &mut rng);
        assert!(r.passed());
        assert!(r.worst_margin >= -1e-10);
        let bad = check_cocoercivity(&Scale(BlockLayout::scalar(3), 1.5), 50, 1.0, &mut rng);
        assert_eq!(bad.violations, 50);
        assert!(bad.worst_margin < 0.0);
    }

    #[test]
    fn modulus_examples() {
        assert!((quasi_contraction_modulus(0.5, 0.2, 1.0).unwrap() - 0.85f64.sqrt()).abs() < 1e-15);
        assert!((quasi_contraction_modulus(0.92195, 0.2, 1.0).unwrap() - (1.0 - 0.36878 + 0.2 * 0.92195 * 0.92195f64).sqrt()).abs() < 1e-12);
        assert_eq!(quasi_contraction_modulus(1.0, 1.0, 1.0).unwrap(), 0.0);
        let near_one = quasi_contraction_modulus(1.0, 1e-12, 1.0).unwrap();
        assert!(near_one < 1.0 && near_one > 1.0 - 1e-11);
        assert!(quasi_contraction_modulus(2.0, 0.5, 1.0).is_err());
        assert!(quasi_contraction_modulus(0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        assert_eq!(strong_monotonicity_from_lipschitz(0.0).unwrap(), 1.0);
        assert_eq!(strong_monotonicity_from_lipschitz(0.5).unwrap(), 0.5);
        assert!(strong_monotonicity_from_lipschitz(1.0).is_err());
    }
}
