use std::borrow::Cow;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::history::{DelayPolicy, IterateHistory, ReadMode, ReadPlan};
use crate::error::{Error, Result};
use crate::fixpoint::{block_delta, block_step, xi_from_parts, ProblemOperator, SamplingDistribution, StepSizePolicy};
use crate::linalg::dist_sq;
use crate::metrics::{CommitRecord, MetricRow, RunMetrics, RunSummary};

/// Stream of the block-index generator. The threaded engine gives agent `a`
/// stream `a`, so a one-agent run draws the same indices.
pub const SAMPLER_STREAM: u64 = 0;
/// Stream for delay-set draws, far from any agent stream.
pub const DELAY_STREAM: u64 = 1 << 63;

/// `ChaCha8` generator for `seed` on the given stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Everything a simulated run needs apart from the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dist: SamplingDistribution,
    pub step: StepSizePolicy,
    pub delay: DelayPolicy,
    pub read_mode: ReadMode,
    pub epochs: usize,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    /// Log every commit in the returned metrics.
    pub record_commits: bool,
}

impl SimConfig {
    /// Uniform sampling, no delay, zero start.
    pub fn new(m: usize, step: StepSizePolicy, epochs: usize, seed: u64) -> Self {
        SimConfig {
            dist: SamplingDistribution::uniform(m),
            step,
            delay: DelayPolicy::None,
            read_mode: ReadMode::Inconsistent,
            epochs,
            seed,
            x0: None,
            x_star: None,
            record_commits: false,
        }
    }

    pub fn with_delay(mut self, delay: DelayPolicy) -> Self {
        self.delay = delay;
        self
    }

    pub fn with_read_mode(mut self, mode: ReadMode) -> Self {
        self.read_mode = mode;
        self
    }

    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn with_x_star(mut self, x_star: Vec<f64>) -> Self {
        self.x_star = Some(x_star);
        self
    }

    pub fn with_dist(mut self, dist: SamplingDistribution) -> Self {
        self.dist = dist;
        self
    }

    pub fn recording_commits(mut self) -> Self {
        self.record_commits = true;
        self
    }
}

/// A stale read of the iterate and of the auxiliary vector.
pub struct Read<'h> {
    pub xhat: Cow<'h, [f64]>,
    pub aux: Cow<'h, [f64]>,
    /// Oldest step whose update the read may miss (`k` if none).
    pub oldest: usize,
}

/// Single-threaded replay of the asynchronous update rule.
pub struct Simulator<'a, O: ProblemOperator> {
    op: &'a O,
    cfg: &'a SimConfig,
    history: IterateHistory,
    aux: Vec<f64>,
    sampler: ChaCha8Rng,
    delay_rng: ChaCha8Rng,
    commits: Option<Vec<CommitRecord>>,
    warnings: Vec<String>,
}

impl<'a, O: ProblemOperator> Simulator<'a, O> {
    pub fn new(op: &'a O, cfg: &'a SimConfig) -> Result<Self> {
        let layout = op.layout();
        let m = layout.num_blocks();
        if cfg.dist.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: cfg.dist.len() });
        }
        if cfg.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        cfg.delay.validate()?;
        let x0 = cfg.x0.clone().unwrap_or_else(|| vec![0.0; layout.dim()]);
        crate::error::ensure_finite("initial point", &x0)?;
        if let Some(xs) = &cfg.x_star {
            if xs.len() != layout.dim() {
                return Err(Error::DimensionMismatch { expected: layout.dim(), got: xs.len() });
            }
        }
        let tau = cfg.delay.tau();
        let mut warnings = Vec::new();
        let eta = cfg.step.eta;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {eta}")));
        }
        let bound = m as f64 * cfg.dist.p_min() / (2.0 * tau as f64 * cfg.dist.p_min().sqrt() + 1.0);
        if eta > bound {
            let msg = format!("step size {eta:e} exceeds the Fejér-safe bound {bound:e} for tau = {tau}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let aux = op.compute_aux(&x0);
        Ok(Simulator {
            op,
            cfg,
            history: IterateHistory::new(x0, layout.clone(), tau)?,
            aux,
            sampler: stream_rng(cfg.seed, SAMPLER_STREAM),
            delay_rng: stream_rng(cfg.seed, DELAY_STREAM),
            commits: cfg.record_commits.then(Vec::new),
            warnings,
        })
    }

    pub fn history(&self) -> &IterateHistory {
        &self.history
    }

    pub fn x(&self) -> &[f64] {
        self.history.current()
    }

    pub fn step_index(&self) -> usize {
        self.history.step()
    }

    pub fn config(&self) -> &SimConfig {
        self.cfg
    }

    pub fn sample_block(&mut self) -> usize {
        self.cfg.dist.sample(&mut self.sampler)
    }

    pub fn plan(&mut self) -> ReadPlan {
        self.cfg.delay.plan(self.history.step(), &mut self.delay_rng)
    }

    /// Builds `x̂ᵏ` and its auxiliary vector for a plan.
    pub fn read(&self, plan: &ReadPlan) -> Result<Read<'_>> {
        let (xhat, oldest) = self.history.read(plan, self.cfg.read_mode)?;
        let aux = match &xhat {
            Cow::Borrowed(_) => Cow::Borrowed(self.aux.as_slice()),
            Cow::Owned(v) => {
                let mut aux = self.aux.clone();
                let x = self.history.current();
                let layout = self.op.layout();
                for b in self.history.touched_blocks() {
                    let r = layout.block(b);
                    let diff: Vec<f64> = v[r.clone()].iter().zip(&x[r]).map(|(a, c)| a - c).collect();
                    if diff.iter().any(|d| *d != 0.0) {
                        self.op.aux_delta(b, &diff, |j, d| aux[j] += d);
                    }
                }
                Cow::Owned(aux)
            }
        };
        Ok(Read { xhat, aux, oldest })
    }

    /// `(S x̂)_i` for the given read.
    pub fn eval_block(&self, i: usize, read: &Read<'_>) -> Vec<f64> {
        let mut s = vec![0.0; self.op.layout().block_size(i)];
        self.op.eval_s_block(i, &*read.xhat, &*read.aux, &mut s);
        s
    }

    /// Applies `-(η/(m p_i)) s` to block `i`.
    pub fn commit(&mut self, i: usize, s: &[f64], oldest: usize) -> Result<()> {
        let step = block_step(self.cfg.step.eta_at(self.history.step()), &self.cfg.dist, i);
        let mut delta = vec![0.0; s.len()];
        block_delta(s, step, &mut delta);
        if let Some(p) = delta.iter().position(|d| !d.is_finite()) {
            return Err(Error::NonFinite { what: "update", index: self.op.layout().block(i).start + p });
        }
        let k = self.history.step();
        self.history.commit(i, &delta)?;
        let aux = &mut self.aux;
        self.op.aux_delta(i, &delta, |j, d| aux[j] += d);
        if let Some(log) = &mut self.commits {
            log.push(CommitRecord { block: i, delta, read_at: oldest, commit_at: k });
        }
        Ok(())
    }

    /// One full step: sample, read, evaluate, commit.
    pub fn step(&mut self) -> Result<usize> {
        let i = self.sample_block();
        let plan = self.plan();
        let read = self.read(&plan)?;
        let s = self.eval_block(i, &read);
        let oldest = read.oldest;
        drop(read);
        self.commit(i, &s, oldest)?;
        Ok(i)
    }

    /// `ξ_k(x*)` for the current history.
    pub fn xi(&self, x_star: &[f64]) -> f64 {
        xi_from_parts(dist_sq(self.x(), x_star), &self.history.diffs_sq(), self.cfg.dist.p_min())
    }

    pub fn row(&self, epoch: usize, started: Instant) -> MetricRow
    where
        O: Sized,
    {
        let x = self.x();
        let mut row = MetricRow::new(epoch, self.op.fixed_point_residual(x), self.cfg.step.eta);
        row.objective = self.op.objective(x);
        if let Some(xs) = &self.cfg.x_star {
            row.dist_sq = Some(dist_sq(x, xs));
            row.xi = Some(self.xi(xs));
        }
        row.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        row
    }

    pub fn finish(self, rows: Vec<MetricRow>, started: Instant) -> RunMetrics
    where
        O: Sized,
    {
        let final_residual = self.op.fixed_point_residual(self.x());
        RunMetrics {
            rows,
            summary: RunSummary {
                final_residual,
                total_ms: started.elapsed().as_secs_f64() * 1e3,
                updates: self.history.step(),
                max_staleness: Some(self.cfg.delay.tau()),
                staleness_hist: Vec::new(),
                agent_updates: vec![self.history.step()],
                aux_drift: max_abs_diff(&self.aux, &self.op.compute_aux(self.history.current())),
                warnings: self.warnings,
            },
            final_x: self.history.current().to_vec(),
            commits: self.commits,
        }
    }
}

/// Runs `epochs · m` steps and logs one row per epoch, starting with epoch 0.
///
/// A non-finite update stops the run early with a warning; the rows logged so
/// far are returned.
pub fn run_simulation<O: ProblemOperator>(op: &O, cfg: &SimConfig) -> Result<RunMetrics> {
    let started = Instant::now();
    let mut sim = Simulator::new(op, cfg)?;
    let m = op.num_blocks();
    let mut rows = vec![sim.row(0, started)];
    'outer: for epoch in 1..=cfg.epochs {
        for _ in 0..m {
            if let Err(e) = sim.step() {
                match e {
                    Error::NonFinite { .. } => {
                        let msg = format!("run stopped at step {}: {e}", sim.step_index());
                        log::warn!("{msg}");
                        sim.warnings.push(msg);
                        break 'outer;
                    }
                    other => return Err(other),
                }
            }
        }
        rows.push(sim.row(epoch, started));
    }
    Ok(sim.finish(rows, started))
}

/// One synchronous sweep: every block is updated from the same read `x`,
/// with step `eta` and no probability scaling.
pub fn sync_sweep<O: ProblemOperator>(op: &O, x: &[f64], eta: f64) -> Result<Vec<f64>> {
    let layout = op.layout();
    if x.len() != layout.dim() {
        return Err(Error::DimensionMismatch { expected: layout.dim(), got: x.len() });
    }
    let aux = op.compute_aux(x);
    let mut out = x.to_vec();
    let mut s = Vec::new();
    for i in 0..layout.num_blocks() {
        let r = layout.block(i);
        s.resize(r.len(), 0.0);
        op.eval_s_block(i, x, aux.as_slice(), &mut s);
        for (o, v) in out[r].iter_mut().zip(&s) {
            *o -= eta * v;
        }
    }
    Ok(out)
}
