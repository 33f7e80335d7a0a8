use serde::{Deserialize, Serialize};

use super::run::{run_simulation, stream_rng, SimConfig, Simulator};
use crate::error::{Error, Result};
use crate::fixpoint::{xi_from_parts, ProblemOperator};
use crate::linalg::{dist_sq, norm_sq};

const TRIAL_STREAM: u64 = (1 << 63) + 1;
/// Enumerate every block exactly when there are at most this many.
pub const EXACT_ENUMERATION_LIMIT: usize = 1000;

/// One step of the conditional-expectation check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityStep {
    pub k: usize,
    pub xi: f64,
    /// Monte-Carlo mean of `ξ_{k+1} + coef·‖x̄ - xᵏ‖²`.
    pub mean: f64,
    pub std_err: f64,
    /// The same quantity averaged exactly over `i ~ p`.
    pub exact: Option<f64>,
}

impl InequalityStep {
    /// `ξ_k - mean`, positive when the inequality holds on average.
    pub fn margin(&self) -> f64 {
        self.xi - self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    /// `(1/m)(1/η - 2τ/(m√p_min) - 1/(m p_min))`
    pub coefficient: f64,
    /// False when the coefficient is negative: the step is outside the
    /// regime where the inequality gives descent.
    pub guaranteed: bool,
    pub trials: usize,
    pub steps: Vec<InequalityStep>,
    /// Steps whose Monte-Carlo mean exceeds `ξ_k` by more than 3 standard errors.
    pub mc_violations: usize,
    /// Steps whose exact expectation exceeds `ξ_k`.
    pub exact_violations: usize,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.mc_violations == 0 && self.exact_violations == 0
    }
}

fn tolerance(xi: f64) -> f64 {
    1e-12 * (1.0 + xi.abs())
}

/// Checks `E[ξ_{k+1} | history] + coef·‖x̄^{k+1} - xᵏ‖² ≤ ξ_k` along one
/// simulated trajectory, with `x̄^{k+1} = xᵏ - η S x̂ᵏ`.
///
/// At each step the state is frozen, the block index is redrawn `trials`
/// times, and the mean is compared with `ξ_k` allowing 3 standard errors.
/// With at most [`EXACT_ENUMERATION_LIMIT`] blocks the expectation is also
/// computed exactly. The trajectory then advances by one ordinary step.
pub fn verify_fundamental_inequality<O: ProblemOperator>(
    op: &O,
    cfg: &SimConfig,
    x_star: &[f64],
    steps: usize,
    trials: usize,
) -> Result<InequalityReport> {
    if trials < 30 {
        return Err(Error::invalid(format!("at least 30 trials are needed, got {trials}")));
    }
    let layout = op.layout();
    if x_star.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: x_star.len() });
    }
    let m = layout.num_blocks();
    let mf = m as f64;
    let tau = cfg.delay.tau();
    let p_min = cfg.dist.p_min();
    let eta = cfg.step.eta;
    let coefficient = (1.0 / eta - 2.0 * tau as f64 / (mf * p_min.sqrt()) - 1.0 / (mf * p_min)) / mf;
    let exact = m <= EXACT_ENUMERATION_LIMIT;

    let mut sim = Simulator::new(op, cfg)?;
    let mut trial_rng = stream_rng(cfg.seed, TRIAL_STREAM);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let k = sim.step_index();
        let i_next = sim.sample_block();
        let plan = sim.plan();
        let read = sim.read(&plan)?;
        let x = sim.x();
        let s_full: Vec<Vec<f64>> = (0..m).map(|i| sim.eval_block(i, &read)).collect();
        let xbar_sq = eta * eta * s_full.iter().map(|s| norm_sq(s)).sum::<f64>();

        let diffs = sim.history().diffs_sq();
        let dist0 = dist_sq(x, x_star);
        let xi_k = xi_from_parts(dist0, &diffs, p_min);
        let block_err: Vec<f64> = (0..m)
            .map(|i| {
                let r = layout.block(i);
                dist_sq(&x[r.clone()], &x_star[r])
            })
            .collect();
        let mut shifted = diffs.clone();
        if tau > 0 {
            shifted.remove(0);
            shifted.push(0.0);
        }
        let mut q_of = |i: usize| -> f64 {
            let r = layout.block(i);
            let step = eta / cfg.dist.normalizer(i);
            let mut new_err = 0.0;
            let mut move_sq = 0.0;
            for ((xj, sj), xs) in x[r.clone()].iter().zip(&s_full[i]).zip(&x_star[r]) {
                let d = -(step * sj);
                let e = xj + d - xs;
                new_err += e * e;
                move_sq += d * d;
            }
            if tau > 0 {
                *shifted.last_mut().unwrap() = move_sq;
            }
            let dist1 = dist0 - block_err[i] + new_err;
            xi_from_parts(dist1, &shifted, p_min) + coefficient * xbar_sq
        };

        let exact_mean = exact.then(|| (0..m).map(|i| cfg.dist.p(i) * q_of(i)).sum::<f64>());
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let i = cfg.dist.sample(&mut trial_rng);
            let q = q_of(i);
            sum += q;
            sum_sq += q * q;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        out.push(InequalityStep { k, xi: xi_k, mean, std_err: (var / n).sqrt(), exact: exact_mean });

        let oldest = read.oldest;
        let s = s_full[i_next].clone();
        drop(read);
        sim.commit(i_next, &s, oldest)?;
    }

    let mc_violations = out.iter().filter(|s| s.mean - 3.0 * s.std_err > s.xi + tolerance(s.xi)).count();
    let exact_violations = out.iter().filter(|s| s.exact.is_some_and(|e| e > s.xi + tolerance(s.xi))).count();
    Ok(InequalityReport {
        coefficient,
        guaranteed: coefficient >= 0.0,
        trials,
        steps: out,
        mc_violations,
        exact_violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub epoch: usize,
    pub mean_dist_sq: f64,
    pub envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRateReport {
    /// `1 - βμη/m`
    pub rate_base: f64,
    pub seeds: usize,
    pub slack: f64,
    pub rows: Vec<RateRow>,
}

impl LinearRateReport {
    /// Worst ratio of the empirical mean to the envelope.
    pub fn worst_ratio(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| if r.envelope > 0.0 { r.mean_dist_sq / r.envelope } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.mean_dist_sq <= r.envelope * self.slack)
    }
}

/// Averages `‖xᵏ - x*‖²` per epoch over seeds `cfg.seed, cfg.seed + 1, …`
/// and compares with `(1 - βμη/m)ᵏ ‖x⁰ - x*‖²`.
pub fn verify_linear_rate<O: ProblemOperator>(
    op: &O,
    cfg: &SimConfig,
    x_star: &[f64],
    mu: f64,
    beta: f64,
    seeds: usize,
    slack: f64,
) -> Result<LinearRateReport> {
    if !(mu > 0.0) {
        return Err(Error::invalid(format!("mu must be positive, got {mu}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    if seeds == 0 {
        return Err(Error::invalid("need at least one seed"));
    }
    let m = op.num_blocks();
    let rate_base = 1.0 - beta * mu * cfg.step.eta / m as f64;
    let mut base = cfg.clone().with_x_star(x_star.to_vec());
    base.record_commits = false;

    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(seeds);
    let mut results: Vec<(usize, Result<Vec<f64>>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let base = &base;
                scope.spawn(move || {
                    (w..seeds)
                        .step_by(workers)
                        .map(|s| {
                            let mut c = base.clone();
                            c.seed = base.seed.wrapping_add(s as u64);
                            let curve = run_simulation(op, &c)
                                .map(|r| r.rows.iter().map(|row| row.dist_sq.unwrap_or(f64::NAN)).collect());
                            (s, curve)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("rate worker panicked")).collect()
    });
    results.sort_by_key(|(s, _)| *s);
    let curves = results.into_iter().map(|(_, c)| c).collect::<Result<Vec<_>>>()?;
    if curves.iter().any(|c| c.len() != curves[0].len()) {
        return Err(Error::invalid("a seed stopped early on a non-finite update"));
    }

    let epochs = curves[0].len();
    let means: Vec<f64> = (0..epochs).map(|e| curves.iter().map(|c| c[e]).sum::<f64>() / seeds as f64).collect();
    let rows = means
        .iter()
        .enumerate()
        .map(|(e, &mean)| RateRow { epoch: e, mean_dist_sq: mean, envelope: rate_base.powi((e * m) as i32) * means[0] })
        .collect();
    Ok(LinearRateReport { rate_base, seeds, slack, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_diag_dominant, gen_jacobi_system};
    use crate::fixpoint::{StepSizePolicy, DEFAULT_FEJER_C};
    use crate::operators::JacobiOp;
    use crate::sim::DelayPolicy;

    #[test]
    fn too_few_trials() {
        let sys = gen_diag_dominant(10, 2, 0).unwrap();
        let op = JacobiOp::new(sys.a, sys.b).unwrap();
        let cfg = SimConfig::new(10, StepSizePolicy::fejer_safe(10, 0.1, 0, 0.9).unwrap(), 1, 0);
        assert!(verify_fundamental_inequality(&op, &cfg, &sys.x_star, 5, 10).is_err());
    }

    #[test]
    fn undelayed_inequality_holds_with_slack() {
        let sys = gen_diag_dominant(20, 3, 1).unwrap();
        let op = JacobiOp::new(sys.a, sys.b).unwrap();
        let cfg = SimConfig::new(20, StepSizePolicy::constant(0.3, 20, 0.05, 0).unwrap(), 1, 4);
        let rep = verify_fundamental_inequality(&op, &cfg, &sys.x_star, 40, 50).unwrap();
        assert!(rep.guaranteed && rep.passed());
        assert!(rep.steps.iter().all(|s| s.exact.unwrap() < s.xi));
    }

    #[test]
    fn delayed_inequality_holds() {
        let sys = gen_diag_dominant(20, 3, 2).unwrap();
        let op = JacobiOp::new(sys.a, sys.b).unwrap();
        let step = StepSizePolicy::fejer_safe(20, 0.05, 4, DEFAULT_FEJER_C).unwrap();
        let cfg = SimConfig::new(20, step, 1, 7).with_delay(DelayPolicy::UniformRandom { tau: 4 });
        let rep = verify_fundamental_inequality(&op, &cfg, &sys.x_star, 50, 100).unwrap();
        assert!(rep.guaranteed);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn oversized_step_flagged() {
        let sys = gen_diag_dominant(20, 3, 2).unwrap();
        let op = JacobiOp::new(sys.a, sys.b).unwrap();
        let safe = crate::fixpoint::fejer_safe_step(20, 0.05, 4, 0.9).unwrap();
        let step = StepSizePolicy::constant(10.0 * safe, 20, 0.05, 4).unwrap();
        let cfg = SimConfig::new(20, step, 1, 7).with_delay(DelayPolicy::Adversarial { tau: 4 });
        let rep = verify_fundamental_inequality(&op, &cfg, &sys.x_star, 5, 30).unwrap();
        assert!(!rep.guaranteed);
    }

    #[test]
    fn rate_envelope_starts_at_initial_error() {
        let sys = gen_jacobi_system(12, 2, 3, 0.5).unwrap();
        let op = JacobiOp::new(sys.a, sys.b).unwrap();
        let mu = 1.0 - op.m_norm();
        let step = StepSizePolicy::linear_rate(crate::fixpoint::default_rho(2), 0.5, mu, 2, 12, 1.0 / 12.0).unwrap();
        let cfg = SimConfig::new(12, step, 10, 0).with_delay(DelayPolicy::Adversarial { tau: 2 });
        let rep = verify_linear_rate(&op, &cfg, &sys.x_star, mu, 0.5, 40, 1.05).unwrap();
        assert_eq!(rep.rows[0].envelope, rep.rows[0].mean_dist_sq);
        assert!(rep.passed(), "{:?}", rep.worst_ratio());
        assert!(verify_linear_rate(&op, &cfg, &sys.x_star, 0.0, 0.5, 1, 1.0).is_err());
    }
}
