use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Validation floor for any step size.
pub const ETA_MIN: f64 = 1e-8;

/// Default safety factor for [`fejer_safe_step`].
pub const DEFAULT_FEJER_C: f64 = 0.99;

/// Largest step `c·m·p_min / (2τ√p_min + 1)` for which the iterates stay
/// stochastically Fejér monotone under delay bound `τ`.
pub fn fejer_safe_step(m: usize, p_min: f64, tau: usize, c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::invalid(format!("safety factor c must lie in (0, 1), got {c}")));
    }
    check_pmin(m, p_min)?;
    let sp = p_min.sqrt();
    Ok(c * m as f64 * p_min / (2.0 * tau as f64 * sp + 1.0))
}

fn check_pmin(m: usize, p_min: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::invalid("need at least one block"));
    }
    // allow a little rounding above 1/m for distributions built from rates
    if !(p_min > 0.0 && p_min <= 1.0 / m as f64 * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("p_min must lie in (0, 1/m], got {p_min} for m = {m}")));
    }
    Ok(())
}

/// Step-size bounds that guarantee a linear rate for quasi-strongly
/// monotone `S`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRateSteps {
    pub eta1: f64,
    pub eta2: f64,
    /// `1 - βμ·min(η̄₁, η̄₂)/m`; `E‖xᵏ - x*‖²` shrinks at least by this per step.
    pub rate_base: f64,
    /// The coefficients of `a η² + b η - (1 - β) = 0` whose root is `η̄₂`.
    pub a: f64,
    pub b: f64,
}

impl LinearRateSteps {
    pub fn eta(&self) -> f64 {
        self.eta1.min(self.eta2)
    }

    /// Per-step contraction for an arbitrary admissible step `eta`.
    pub fn rate_for(&self, eta: f64, beta: f64, mu: f64, m: usize) -> f64 {
        1.0 - beta * mu * eta / m as f64
    }
}

/// Default `ρ = (1 + 1/max(τ,1))²`.
pub fn default_rho(tau: usize) -> f64 {
    let t = tau.max(1) as f64;
    (1.0 + 1.0 / t).powi(2)
}

pub fn linear_rate_steps(rho: f64, beta: f64, mu: f64, tau: usize, m: usize, p_min: f64) -> Result<LinearRateSteps> {
    if !(rho > 1.0 && rho.is_finite()) {
        return Err(Error::invalid(format!("rho must exceed 1, got {rho}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    check_pmin(m, p_min)?;
    let mf = m as f64;
    let t = tau as f64;
    let sp = p_min.sqrt();
    let sr = rho.sqrt();

    let eta1 = (1.0 - 1.0 / rho) * (mf * sp / 8.0) * (sr - 1.0) / (rho.powf((t + 1.0) / 2.0) - 1.0);

    let geo = rho * (rho.powi(tau as i32) - 1.0) / (rho - 1.0);
    let a = 2.0 * beta * mu * t / (mf * mf * p_min) * geo;
    let b = 1.0 / (mf * p_min) + (2.0 / mf) * (geo * t / p_min).sqrt();
    let eta2 = if a == 0.0 {
        (1.0 - beta) / b
    } else {
        // rationalised root (-b + √(b² + 4(1-β)a)) / 2a, stable as a → 0
        2.0 * (1.0 - beta) / (b + (b * b + 4.0 * (1.0 - beta) * a).sqrt())
    };
    let rate_base = 1.0 - beta * mu * eta1.min(eta2) / mf;
    Ok(LinearRateSteps { eta1, eta2, rate_base, a, b })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Constant,
    FejerSafe,
    LinearRate,
}

/// A constant step together with how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizePolicy {
    pub kind: StepKind,
    pub eta: f64,
    pub c: Option<f64>,
    pub tau: usize,
    pub m: usize,
    pub p_min: f64,
    pub linear: Option<LinearRateSteps>,
}

impl StepSizePolicy {
    pub fn constant(eta: f64, m: usize, p_min: f64, tau: usize) -> Result<Self> {
        if !(eta >= ETA_MIN && eta.is_finite()) {
            return Err(Error::invalid(format!("step size {eta} is below the floor {ETA_MIN}")));
        }
        Ok(StepSizePolicy { kind: StepKind::Constant, eta, c: None, tau, m, p_min, linear: None })
    }

    pub fn fejer_safe(m: usize, p_min: f64, tau: usize, c: f64) -> Result<Self> {
        let eta = fejer_safe_step(m, p_min, tau, c)?;
        Ok(StepSizePolicy { kind: StepKind::FejerSafe, eta, c: Some(c), tau, m, p_min, linear: None })
    }

    pub fn linear_rate(rho: f64, beta: f64, mu: f64, tau: usize, m: usize, p_min: f64) -> Result<Self> {
        let lr = linear_rate_steps(rho, beta, mu, tau, m, p_min)?;
        let eta = lr.eta();
        if eta < ETA_MIN {
            return Err(Error::invalid(format!("linear-rate step {eta:e} is below the floor {ETA_MIN}")));
        }
        Ok(StepSizePolicy { kind: StepKind::LinearRate, eta, c: None, tau, m, p_min, linear: Some(lr) })
    }

    /// Step for update `k`. Every policy here is constant.
    pub fn eta_at(&self, _k: usize) -> f64 {
        self.eta
    }

    /// The `c → 1` Fejér bound for the stored parameters.
    pub fn fejer_limit(&self) -> f64 {
        self.m as f64 * self.p_min / (2.0 * self.tau as f64 * self.p_min.sqrt() + 1.0)
    }

    pub fn exceeds_fejer_bound(&self) -> bool {
        self.eta > self.fejer_limit()
    }
}

/// The Lyapunov weight structure for delay bound `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FejerMetricSpec {
    pub tau: usize,
    pub p_min: f64,
}

impl FejerMetricSpec {
    pub fn new(tau: usize, p_min: f64) -> Result<Self> {
        if !(p_min > 0.0 && p_min <= 1.0) {
            return Err(Error::invalid(format!("p_min must lie in (0, 1], got {p_min}")));
        }
        Ok(FejerMetricSpec { tau, p_min })
    }

    /// `(τ+1)×(τ+1)` tri-diagonal weight matrix, row-major, acting on
    /// `(xᵏ - x*, x^{k-1} - x*, …, x^{k-τ} - x*)`.
    pub fn matrix(&self) -> Vec<f64> {
        let n = self.tau + 1;
        let t = self.tau as f64;
        let sp = self.p_min.sqrt();
        let mut m = vec![0.0; n * n];
        if n == 1 {
            m[0] = 1.0;
            return m;
        }
        for l in 0..n {
            m[l * n + l] = if l == 0 {
                1.0 + sp * t
            } else if l == self.tau {
                sp
            } else {
                sp * (2.0 * (t - l as f64) + 1.0)
            };
            if l + 1 < n {
                let off = -sp * (t - l as f64);
                m[l * n + l + 1] = off;
                m[(l + 1) * n + l] = off;
            }
        }
        m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::linalg::symmetric_eigenvalues(self.tau + 1, &self.matrix())[0]
    }

    /// `Σ_{a,b} M′_{ab} ⟨y_a, y_b⟩` where `ys[0] = xᵏ - x*` and `ys[l]` is
    /// `l` steps older.
    pub fn quadratic_form(&self, ys: &[Vec<f64>]) -> Result<f64> {
        let n = self.tau + 1;
        if ys.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: ys.len() });
        }
        let m = self.matrix();
        let mut acc = 0.0;
        for a in 0..n {
            for b in a.saturating_sub(1)..(a + 2).min(n) {
                acc += m[a * n + b] * crate::linalg::dot(&ys[a], &ys[b]);
            }
        }
        Ok(acc)
    }
}

/// `ξ_k(x*) = ‖xᵏ - x*‖² + √p_min Σ_j (j+1)‖h_j - h_{j+1}‖²`.
///
/// `history` holds `x^{k-τ}, …, xᵏ`, oldest first.
pub fn xi_metric(history: &[Vec<f64>], x_star: &[f64], p_min: f64, tau: usize) -> Result<f64> {
    if history.len() < tau + 1 {
        return Err(Error::invalid(format!(
            "xi needs {} iterates for tau = {tau}, got {}",
            tau + 1,
            history.len()
        )));
    }
    let h = &history[history.len() - tau - 1..];
    let last = &h[tau];
    if last.len() != x_star.len() {
        return Err(Error::DimensionMismatch { expected: x_star.len(), got: last.len() });
    }
    let diffs: Vec<f64> = h.windows(2).map(|w| crate::linalg::dist_sq(&w[0], &w[1])).collect();
    Ok(xi_from_parts(crate::linalg::dist_sq(last, x_star), &diffs, p_min))
}

/// ξ from `‖xᵏ - x*‖²` and the consecutive squared step lengths, oldest first.
pub fn xi_from_parts(dist_sq: f64, diffs_sq: &[f64], p_min: f64) -> f64 {
    let weighted: f64 = diffs_sq.iter().enumerate().map(|(j, d)| (j + 1) as f64 * d).sum();
    dist_sq + p_min.sqrt() * weighted
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fejer_examples() {
        assert!((fejer_safe_step(100, 0.01, 5, 0.9).unwrap() - 0.45).abs() < 1e-15);
        let sync = fejer_safe_step(7, 1.0 / 7.0, 0, 1.0 - 1e-12).unwrap();
        assert!((sync - 1.0).abs() < 1e-11);
        // τ = √m gives c/3
        let m = 400;
        let v = fejer_safe_step(m, 1.0 / m as f64, 20, 0.6).unwrap();
        assert!((v - 0.2).abs() < 1e-14);
        assert!(fejer_safe_step(10, 0.1, 1, 1.0).is_err());
        assert!(fejer_safe_step(10, 0.1, 1, 0.0).is_err());
    }

    #[test]
    fn eta2_root_plugs_back() {
        let lr = linear_rate_steps(1.5625, 0.5, 0.1, 4, 100, 0.01).unwrap();
        let r = lr.a * lr.eta2 * lr.eta2 + lr.b * lr.eta2 - 0.5;
        assert!(r.abs() < 1e-10);
        assert!(lr.rate_base < 1.0 && lr.rate_base > 0.0);
    }

    #[test]
    fn eta2_tau_zero_limit() {
        let lr = linear_rate_steps(default_rho(0), 0.3, 0.2, 0, 10, 0.1).unwrap();
        assert_eq!(lr.a, 0.0);
        assert!((lr.eta2 - 0.7 / lr.b).abs() < 1e-15);
        assert!((lr.b - 1.0).abs() < 1e-15);
        // near-zero τ behaves continuously: small a gives close to the limit
        let near = linear_rate_steps(default_rho(1), 0.3, 1e-12, 1, 10, 0.1).unwrap();
        assert!((near.eta2 - 0.7 / near.b).abs() < 1e-9);
    }

    #[test]
    fn eta2_vanishes_as_beta_to_one() {
        let lr = linear_rate_steps(1.5625, 1.0 - 1e-9, 0.5, 4, 100, 0.01).unwrap();
        assert!(lr.eta2 > 0.0 && lr.eta2 < 1e-8);
    }

    #[test]
    fn xi_examples() {
        let h = vec![vec![0.0], vec![1.0], vec![1.0]];
        assert!((xi_metric(&h, &[0.0], 0.25, 2).unwrap() - 1.5).abs() < 1e-15);
        let c = vec![vec![2.0, 3.0]; 4];
        assert_eq!(xi_metric(&c, &[2.0, 3.0], 0.1, 3).unwrap(), 0.0);
        let one = vec![vec![3.0, 4.0]];
        assert_eq!(xi_metric(&one, &[0.0, 0.0], 0.5, 0).unwrap(), 25.0);
        assert!(xi_metric(&one, &[0.0, 0.0], 0.5, 1).is_err());
    }

    #[test]
    fn metric_matrix_is_positive_definite() {
        for tau in 0..=64 {
            for &p in &[1.0, 0.5, 0.01, 1e-4] {
                let spec = FejerMetricSpec::new(tau, p).unwrap();
                assert!(spec.min_eigenvalue() > 0.0, "tau {tau} p {p}");
            }
        }
    }

    #[test]
    fn policy_floor() {
        assert!(StepSizePolicy::constant(1e-9, 1, 1.0, 0).is_err());
        let p = StepSizePolicy::fejer_safe(10, 0.1, 3, 0.5).unwrap();
        assert!(!p.exceeds_fejer_bound());
        let q = StepSizePolicy::constant(p.fejer_limit() * 10.0, 10, 0.1, 3).unwrap();
        assert!(q.exceeds_fejer_bound());
    }

    proptest! {
        #[test]
        fn xi_matches_quadratic_form(
            tau in 0usize..6,
            p in 0.01f64..1.0,
            seed in proptest::collection::vec(-3.0f64..3.0, 2 * 7 + 2),
        ) {
            let dim = 2;
            let hist: Vec<Vec<f64>> = (0..=tau).map(|j| seed[2 * j..2 * j + dim].to_vec()).collect();
            let xs = seed[seed.len() - 2..].to_vec();
            let xi = xi_metric(&hist, &xs, p, tau).unwrap();
            let ys: Vec<Vec<f64>> = hist.iter().rev().map(|h| crate::linalg::sub(h, &xs)).collect();
            let q = FejerMetricSpec::new(tau, p).unwrap().quadratic_form(&ys).unwrap();
            prop_assert!((xi - q).abs() <= 1e-10 * (1.0 + xi.abs()));
            prop_assert!(xi >= crate::linalg::dist_sq(&hist[tau], &xs) - 1e-12);
        }

        #[test]
        fn fejer_monotone(m in 1usize..500, tau in 0usize..50, c in 0.01f64..0.99) {
            let p = 1.0 / m as f64;
            let a = fejer_safe_step(m, p, tau, c).unwrap();
            let b = fejer_safe_step(m, p, tau + 1, c).unwrap();
            prop_assert!(b < a);
            let half = fejer_safe_step(m, p / 2.0, tau, c).unwrap();
            prop_assert!(half <= a);
        }

        #[test]
        fn eta2_solves_quadratic(
            tau in 1usize..40, m in 1usize..300, beta in 0.05f64..0.95, mu in 0.01f64..1.0,
        ) {
            let p = 1.0 / m as f64;
            let lr = linear_rate_steps(default_rho(tau), beta, mu, tau, m, p).unwrap();
            let r = lr.a * lr.eta2 * lr.eta2 + lr.b * lr.eta2 - (1.0 - beta);
            prop_assert!(r.abs() <= 1e-10 * (1.0 - beta).max(1.0));
            prop_assert!(lr.rate_base > 0.0 && lr.rate_base < 1.0);
        }
    }
}
