use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::state::{atomic_block_commit, BlockScheme, SharedState};
use crate::error::{Error, Result};
use crate::fixpoint::{block_delta, block_step, ProblemOperator, SamplingDistribution, StepSizePolicy};
use crate::linalg::dist_sq;
use crate::metrics::{CommitRecord, MetricRow, RunMetrics, RunSummary};
use crate::sim::run::max_abs_diff;
use crate::sim::SAMPLER_STREAM;

/// Staleness histogram width; the last bucket collects the tail.
pub const STALENESS_BUCKETS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub agents: usize,
    pub epochs: usize,
    pub dist: SamplingDistribution,
    pub step: StepSizePolicy,
    /// `None` picks [`BlockScheme::default_for`] the operator's layout.
    pub scheme: Option<BlockScheme>,
    /// Agent `a` draws from stream `a` of this seed.
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub x_star: Option<Vec<f64>>,
    pub record_commits: bool,
    /// Agents yield the processor after this many of their own updates.
    pub yield_interval: Option<usize>,
}

impl EngineConfig {
    pub fn new(agents: usize, m: usize, step: StepSizePolicy, epochs: usize, seed: u64) -> Self {
        EngineConfig {
            agents,
            epochs,
            dist: SamplingDistribution::uniform(m),
            step,
            scheme: None,
            seed,
            x0: None,
            x_star: None,
            record_commits: false,
            yield_interval: None,
        }
    }

    pub fn with_scheme(mut self, scheme: BlockScheme) -> Self {
        self.scheme = Some(scheme);
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

    pub fn with_yield_interval(mut self, every: usize) -> Self {
        self.yield_interval = Some(every.max(1));
        self
    }

    fn validate<O: ProblemOperator>(&self, op: &O) -> Result<Vec<f64>> {
        if self.agents == 0 {
            return Err(Error::invalid("at least one agent is required"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        let layout = op.layout();
        if self.dist.len() != layout.num_blocks() {
            return Err(Error::DimensionMismatch { expected: layout.num_blocks(), got: self.dist.len() });
        }
        if !(self.step.eta > 0.0 && self.step.eta.is_finite()) {
            return Err(Error::invalid(format!("step size must be positive, got {}", self.step.eta)));
        }
        let x0 = self.x0.clone().unwrap_or_else(|| vec![0.0; layout.dim()]);
        if x0.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: x0.len() });
        }
        crate::error::ensure_finite("initial point", &x0)?;
        if let Some(xs) = &self.x_star {
            if xs.len() != layout.dim() {
                return Err(Error::DimensionMismatch { expected: layout.dim(), got: xs.len() });
            }
        }
        Ok(x0)
    }
}

struct AgentLog {
    updates: usize,
    hist: Vec<usize>,
    max_staleness: usize,
    snapshots: Vec<(usize, Vec<f64>, f64)>,
    commits: Vec<CommitRecord>,
}

impl AgentLog {
    fn new() -> Self {
        AgentLog { updates: 0, hist: vec![0; STALENESS_BUCKETS], max_staleness: 0, snapshots: Vec::new(), commits: Vec::new() }
    }
}

/// Sets the shared abort flag if the agent unwinds.
struct AbortOnPanic<'a>(&'a AtomicBool);

impl Drop for AbortOnPanic<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.store(true, Ordering::SeqCst);
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

fn agent_rng(seed: u64, agent: usize) -> rand_chacha::ChaCha8Rng {
    crate::sim::stream_rng(seed, SAMPLER_STREAM + agent as u64)
}

/// Runs `agents` threads until `epochs · m` updates have been committed.
///
/// Each agent repeatedly samples a block, reads the shared state without
/// locking, evaluates `(S x̂)_i` and commits `-(η/(m p_i)) (S x̂)_i`. The
/// agent whose commit completes an epoch snapshots the iterate; residuals are
/// computed from the snapshots after all agents have stopped.
pub fn run_engine<O: ProblemOperator>(op: &O, cfg: &EngineConfig) -> Result<RunMetrics> {
    let x0 = cfg.validate(op)?;
    let layout = op.layout();
    let m = layout.num_blocks();
    let total = cfg.epochs * m;
    let scheme = cfg.scheme.unwrap_or_else(|| BlockScheme::default_for(layout));
    let state = SharedState::for_operator(op, &x0, scheme)?;
    let mut warnings = Vec::new();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    if cfg.agents > cores {
        let msg = format!("{} agents exceed the {cores} available cores", cfg.agents);
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let claimed = AtomicUsize::new(0);
    let committed = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let started = Instant::now();

    let joined: Vec<std::thread::Result<AgentLog>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.agents)
            .map(|agent| {
                let (state, claimed, committed, abort, failure) = (&state, &claimed, &committed, &abort, &failure);
                scope.spawn(move || {
                    let _guard = AbortOnPanic(abort);
                    let mut rng = agent_rng(cfg.seed, agent);
                    let mut log = AgentLog::new();
                    let mut s = vec![0.0; layout.max_block_size()];
                    let mut delta = vec![0.0; layout.max_block_size()];
                    let xv = state.x_view();
                    let av = state.aux_view();
                    while !abort.load(Ordering::Relaxed) {
                        if claimed.fetch_add(1, Ordering::Relaxed) >= total {
                            break;
                        }
                        let i = cfg.dist.sample(&mut rng);
                        let read_at = committed.load(Ordering::Acquire);
                        let len = layout.block_size(i);
                        op.eval_s_block(i, &xv, &av, &mut s[..len]);
                        let step = block_step(cfg.step.eta_at(read_at), &cfg.dist, i);
                        block_delta(&s[..len], step, &mut delta[..len]);
                        if let Some(p) = delta[..len].iter().position(|d| !d.is_finite()) {
                            let err = Error::NonFinite { what: "update", index: layout.block(i).start + p };
                            failure.lock().unwrap_or_else(|e| e.into_inner()).get_or_insert(err);
                            abort.store(true, Ordering::SeqCst);
                            break;
                        }
                        atomic_block_commit(state, op, i, &delta[..len]).expect("block index from the sampler");
                        let c = committed.fetch_add(1, Ordering::AcqRel);
                        let staleness = c - read_at.min(c);
                        log.updates += 1;
                        log.max_staleness = log.max_staleness.max(staleness);
                        log.hist[staleness.min(STALENESS_BUCKETS - 1)] += 1;
                        if cfg.record_commits {
                            log.commits.push(CommitRecord {
                                block: i,
                                delta: delta[..len].to_vec(),
                                read_at,
                                commit_at: c,
                            });
                        }
                        if (c + 1) % m == 0 {
                            log.snapshots.push(((c + 1) / m, state.snapshot(), started.elapsed().as_secs_f64() * 1e3));
                        }
                        if let Some(every) = cfg.yield_interval {
                            if log.updates.is_multiple_of(every) {
                                std::thread::yield_now();
                            }
                        }
                    }
                    log
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    let total_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut logs = Vec::with_capacity(cfg.agents);
    for (agent, r) in joined.into_iter().enumerate() {
        match r {
            Ok(l) => logs.push(l),
            Err(p) => return Err(Error::AgentPanic { agent, message: panic_message(p) }),
        }
    }
    if let Some(err) = failure.into_inner().unwrap_or_else(|e| e.into_inner()) {
        return Err(err);
    }

    let final_x = state.snapshot();
    let agent_updates: Vec<usize> = logs.iter().map(|l| l.updates).collect();
    let updates = committed.load(Ordering::SeqCst);
    let max_staleness = logs.iter().map(|l| l.max_staleness).max().unwrap_or(0);
    let mut staleness_hist = vec![0; STALENESS_BUCKETS];
    for l in &logs {
        staleness_hist.iter_mut().zip(&l.hist).for_each(|(a, b)| *a += b);
    }
    while staleness_hist.len() > 1 && staleness_hist.last() == Some(&0) {
        staleness_hist.pop();
    }

    let mut snaps: Vec<(usize, Vec<f64>, f64)> = vec![(0, x0, 0.0)];
    let mut commits = cfg.record_commits.then(Vec::new);
    for l in logs {
        snaps.extend(l.snapshots);
        if let Some(c) = &mut commits {
            c.extend(l.commits);
        }
    }
    snaps.sort_by_key(|s| s.0);
    if let Some(c) = &mut commits {
        c.sort_by_key(|r| r.commit_at);
    }

    let n_rows = snaps.len();
    let rows = snaps
        .into_iter()
        .enumerate()
        .map(|(r, (epoch, x, wall_ms))| {
            let mut row = MetricRow::new(epoch, op.fixed_point_residual(&x), cfg.step.eta);
            row.objective = op.objective(&x);
            row.dist_sq = cfg.x_star.as_ref().map(|xs| dist_sq(&x, xs));
            row.wall_ms = wall_ms;
            if r + 1 == n_rows {
                row.max_staleness = Some(max_staleness);
                row.agent_updates = Some(agent_updates.clone());
            }
            row
        })
        .collect();

    Ok(RunMetrics {
        rows,
        summary: RunSummary {
            final_residual: op.fixed_point_residual(&final_x),
            total_ms,
            updates,
            max_staleness: Some(max_staleness),
            staleness_hist,
            agent_updates,
            aux_drift: max_abs_diff(&state.aux_snapshot(), &op.compute_aux(&final_x)),
            warnings,
        },
        final_x,
        commits,
    })
}

/// Synchronous baseline: in each round every agent reads the same state,
/// waits at a barrier, commits its block update, and waits again.
pub fn run_sync_engine<O: ProblemOperator>(op: &O, cfg: &EngineConfig) -> Result<RunMetrics> {
    let x0 = cfg.validate(op)?;
    let layout = op.layout();
    let m = layout.num_blocks();
    let total = cfg.epochs * m;
    let p = cfg.agents;
    let rounds = total.div_ceil(p);
    let scheme = cfg.scheme.unwrap_or_else(|| BlockScheme::default_for(layout));
    let state = SharedState::for_operator(op, &x0, scheme)?;
    let barrier = Barrier::new(p);
    let abort = AtomicBool::new(false);
    let started = Instant::now();

    let joined: Vec<std::thread::Result<usize>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..p)
            .map(|agent| {
                let (state, barrier, abort) = (&state, &barrier, &abort);
                scope.spawn(move || {
                    let mut rng = agent_rng(cfg.seed, agent);
                    let mut s = vec![0.0; layout.max_block_size()];
                    let mut delta = vec![0.0; layout.max_block_size()];
                    let xv = state.x_view();
                    let av = state.aux_view();
                    let mut updates = 0;
                    for round in 0..rounds {
                        let active = round * p + agent < total && !abort.load(Ordering::Relaxed);
                        let mut block = None;
                        if active {
                            let i = cfg.dist.sample(&mut rng);
                            let len = layout.block_size(i);
                            op.eval_s_block(i, &xv, &av, &mut s[..len]);
                            block_delta(&s[..len], block_step(cfg.step.eta, &cfg.dist, i), &mut delta[..len]);
                            if delta[..len].iter().all(|d| d.is_finite()) {
                                block = Some((i, len));
                            } else {
                                abort.store(true, Ordering::SeqCst);
                            }
                        }
                        barrier.wait();
                        if let Some((i, len)) = block {
                            atomic_block_commit(state, op, i, &delta[..len]).expect("block index from the sampler");
                            updates += 1;
                        }
                        barrier.wait();
                    }
                    updates
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    let mut agent_updates = Vec::with_capacity(p);
    for (agent, r) in joined.into_iter().enumerate() {
        match r {
            Ok(n) => agent_updates.push(n),
            Err(pl) => return Err(Error::AgentPanic { agent, message: panic_message(pl) }),
        }
    }
    if abort.load(Ordering::SeqCst) {
        return Err(Error::NonFinite { what: "update", index: 0 });
    }
    let final_x = state.snapshot();
    let mut row = MetricRow::new(cfg.epochs, op.fixed_point_residual(&final_x), cfg.step.eta);
    row.objective = op.objective(&final_x);
    row.dist_sq = cfg.x_star.as_ref().map(|xs| dist_sq(&final_x, xs));
    row.wall_ms = total_ms;
    row.agent_updates = Some(agent_updates.clone());
    let mut first = MetricRow::new(0, op.fixed_point_residual(&x0), cfg.step.eta);
    first.objective = op.objective(&x0);
    first.dist_sq = cfg.x_star.as_ref().map(|xs| dist_sq(&x0, xs));
    Ok(RunMetrics {
        rows: vec![first, row],
        summary: RunSummary {
            final_residual: op.fixed_point_residual(&final_x),
            total_ms,
            updates: agent_updates.iter().sum(),
            max_staleness: Some(0),
            staleness_hist: Vec::new(),
            agent_updates,
            aux_drift: max_abs_diff(&state.aux_snapshot(), &op.compute_aux(&final_x)),
            warnings: Vec::new(),
        },
        final_x,
        commits: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Async,
    Sync,
}

impl std::fmt::Display for ExecMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExecMode::Async => "async",
            ExecMode::Sync => "sync",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub agents: usize,
    pub mode: ExecMode,
    pub wall_s: f64,
    /// Wall time of the one-agent run of the same mode divided by this one.
    pub speedup: f64,
}

/// Times the engine for each agent count, asynchronously and, if asked,
/// with the barrier baseline. A one-agent run is always included as the
/// reference.
pub fn measure_speedup<O: ProblemOperator>(
    op: &O,
    base: &EngineConfig,
    agent_counts: &[usize],
    with_sync: bool,
) -> Result<Vec<SpeedupRow>> {
    let mut counts: Vec<usize> = agent_counts.to_vec();
    if !counts.contains(&1) {
        counts.push(1);
    }
    counts.sort_unstable();
    counts.dedup();
    let mut modes = vec![ExecMode::Async];
    if with_sync {
        modes.push(ExecMode::Sync);
    }
    let mut rows = Vec::new();
    for mode in modes {
        let mut reference = None;
        for &p in &counts {
            let mut cfg = base.clone();
            cfg.agents = p;
            cfg.record_commits = false;
            let m = match mode {
                ExecMode::Async => run_engine(op, &cfg)?,
                ExecMode::Sync => run_sync_engine(op, &cfg)?,
            };
            let wall_s = m.summary.total_ms / 1e3;
            let r = *reference.get_or_insert(wall_s);
            rows.push(SpeedupRow { agents: p, mode, wall_s, speedup: if p == 1 { 1.0 } else { r / wall_s } });
        }
    }
    Ok(rows)
}
