use std::path::PathBuf;

use asyncoord::engine::{measure_speedup, run_engine, run_sync_engine, BlockScheme, EngineConfig};
use asyncoord::fixpoint::{check_cocoercivity, default_rho, quasi_contraction_modulus, StepSizePolicy};
use asyncoord::sim::{
    run_simulation, verify_fundamental_inequality, verify_linear_rate, DelayPolicy, InequalityReport, ReadMode, SimConfig,
};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::output::Sink;
use crate::problem::{Instance, Problem, ProblemArgs};
use crate::{with_op, CliError};

#[derive(Debug, Clone, Args, Serialize)]
pub struct StepArgs {
    /// Fixed step size; overrides --c
    #[arg(long)]
    pub eta: Option<f64>,

    /// Fraction of the largest step with a Fejér guarantee for the delay bound
    #[arg(long, default_value_t = 0.99)]
    pub c: f64,
}

impl StepArgs {
    fn policy(&self, m: usize, tau: usize) -> Result<StepSizePolicy, CliError> {
        let p_min = 1.0 / m as f64;
        match self.eta {
            Some(eta) => StepSizePolicy::constant(eta, m, p_min, tau),
            None => StepSizePolicy::fejer_safe(m, p_min, tau, self.c),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    None,
    Fixed,
    Uniform,
    Adversarial,
    PerCoordinate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadModeArg {
    Inconsistent,
    Consistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyKind {
    Fundamental,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    AtomicScalar,
    DualCopy,
    PerBlockLock,
}

impl From<SchemeArg> for BlockScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::AtomicScalar => BlockScheme::AtomicScalar,
            SchemeArg::DualCopy => BlockScheme::DualCopy,
            SchemeArg::PerBlockLock => BlockScheme::PerBlockLock,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineArg {
    Sync,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    /// Delay bound
    #[arg(long, default_value_t = 0)]
    pub tau: usize,

    #[arg(long, value_enum, default_value_t = PolicyArg::Uniform)]
    pub policy: PolicyArg,

    /// Per-block delays for --policy per-coordinate, cycled over blocks
    #[arg(long, value_delimiter = ',')]
    pub schedule: Vec<usize>,

    #[arg(long, value_enum, default_value_t = ReadModeArg::Inconsistent)]
    pub read_mode: ReadModeArg,

    #[command(flatten)]
    pub step: StepArgs,

    #[arg(long, default_value_t = 100)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also run a convergence check on the same configuration
    #[arg(long, value_enum)]
    pub verify: Option<VerifyKind>,

    /// Steps checked by --verify fundamental
    #[arg(long, default_value_t = 50)]
    pub verify_steps: usize,

    /// Block-index resamples per step for --verify fundamental
    #[arg(long, default_value_t = 200)]
    pub trials: usize,

    /// Independent runs averaged by --verify rate
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,

    /// CSV destination (stdout if omitted)
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    #[arg(long, default_value_t = 1)]
    pub agents: usize,

    /// Delay bound assumed when choosing the step size (default: --agents)
    #[arg(long)]
    pub tau: Option<usize>,

    #[command(flatten)]
    pub step: StepArgs,

    #[arg(long, default_value_t = 100)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// How blocks are shared between threads (default depends on block size)
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,

    /// Agents yield the processor after this many updates
    #[arg(long)]
    pub yield_every: Option<usize>,

    /// Also run the barrier-synchronized variant
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,

    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    /// Delay bound for the inequality and rate checks
    #[arg(long, default_value_t = 4)]
    pub tau: usize,

    /// Step-size fraction for the inequality check
    #[arg(long, default_value_t = 0.9)]
    pub c: f64,

    #[arg(long, default_value_t = 50)]
    pub steps: usize,

    #[arg(long, default_value_t = 200)]
    pub trials: usize,

    /// Sampled points for the cocoercivity and quasi-contraction checks
    #[arg(long, default_value_t = 10_000)]
    pub points: usize,

    /// Independent runs for the rate check
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,

    /// Epochs for the rate check
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    /// Largest problem dimension accepted
    #[arg(long, default_value_t = 1000)]
    pub max_dim: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,

    /// Agent counts to time
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    pub agents: Vec<usize>,

    #[command(flatten)]
    pub step: StepArgs,

    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Also time the barrier-synchronized variant
    #[arg(long, value_enum)]
    pub baseline: Option<BaselineArg>,

    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

fn delay_policy(args: &SimulateArgs) -> Result<DelayPolicy, CliError> {
    let tau = args.tau;
    let policy = match args.policy {
        PolicyArg::None => DelayPolicy::None,
        _ if tau == 0 && args.policy != PolicyArg::PerCoordinate => DelayPolicy::None,
        PolicyArg::Fixed => DelayPolicy::Fixed { tau },
        PolicyArg::Uniform => DelayPolicy::UniformRandom { tau },
        PolicyArg::Adversarial => DelayPolicy::Adversarial { tau },
        PolicyArg::PerCoordinate => {
            if args.schedule.is_empty() {
                return Err(CliError::Config("--policy per-coordinate needs --schedule".into()));
            }
            DelayPolicy::PerCoordinate { schedule: args.schedule.clone() }
        }
    };
    Ok(policy)
}

fn header<T: Serialize>(sink: &mut Sink, command: &str, args: &T, inst: &Instance) -> Result<(), CliError> {
    sink.comment(&format!("asyncoord {command} {}", env!("CARGO_PKG_VERSION")))?;
    sink.echo("config", args)?;
    sink.echo(
        "problem",
        &serde_json::json!({
            "dim": inst.dim(),
            "blocks": inst.num_blocks(),
            "data_path": inst.data_path,
            "known_solution": inst.x_star.is_some(),
        }),
    )
}

fn inequality_failures(rep: &InequalityReport) -> usize {
    rep.mc_violations + rep.exact_violations
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let delay = delay_policy(args)?;
    let mut inst = args.problem.build()?;
    let m = inst.num_blocks();
    let step = args.step.policy(m, delay.tau())?;
    let x_star = inst.solution(args.verify.is_some());
    let mut cfg = SimConfig::new(m, step, args.epochs, args.seed).with_delay(delay).with_read_mode(match args.read_mode {
        ReadModeArg::Inconsistent => ReadMode::Inconsistent,
        ReadModeArg::Consistent => ReadMode::Consistent,
    });
    if let Some(xs) = &x_star {
        cfg = cfg.with_x_star(xs.clone());
    }
    let metrics = with_op!(&inst.problem, op => run_simulation(op, &cfg)).map_err(CliError::from_core)?;

    let mut sink = Sink::open(args.out.as_deref())?;
    header(&mut sink, "simulate", args, &inst)?;
    sink.echo("resolved", &serde_json::json!({ "eta": cfg.step.eta, "delay": cfg.delay, "tau": cfg.delay.tau() }))?;
    sink.metrics(&metrics)?;

    let mut failure = None;
    match args.verify {
        None => {}
        Some(VerifyKind::Fundamental) => {
            let xs = x_star.ok_or_else(|| CliError::Config("no reference solution for the inequality check".into()))?;
            let rep = with_op!(&inst.problem, op => verify_fundamental_inequality(op, &cfg, &xs, args.verify_steps, args.trials))
                .map_err(CliError::from_core)?;
            sink.comment(&format!(
                "fundamental inequality: coefficient={:e} guaranteed={} trials={}",
                rep.coefficient, rep.guaranteed, rep.trials
            ))?;
            let rows = rep.steps.iter().map(|s| {
                let sigmas = if s.std_err > 0.0 { s.margin() / s.std_err } else { f64::INFINITY };
                let exact = s.exact.map(|e| format!("{e:e}")).unwrap_or_default();
                let margin = format!("{:e}", s.margin());
                [s.k.to_string(), format!("{:e}", s.xi), format!("{:e}", s.mean), format!("{:e}", s.std_err), exact, margin, format!("{sigmas:.3}")]
            });
            sink.comment("verify")?;
            sink.table(["k", "xi", "mean", "std_err", "exact", "margin", "margin_sigmas"], rows)?;
            if inequality_failures(&rep) > 0 {
                failure = Some(format!(
                    "fundamental inequality violated at {} Monte-Carlo and {} exact steps",
                    rep.mc_violations, rep.exact_violations
                ));
            }
        }
        Some(VerifyKind::Rate) => {
            let mu = inst
                .strong_monotonicity()
                .ok_or_else(|| CliError::Config("--verify rate needs a jacobi problem with ‖M‖ < 1".into()))?;
            let xs = x_star.expect("jacobi problems carry their solution");
            let tau = cfg.delay.tau();
            let rate_step = StepSizePolicy::linear_rate(default_rho(tau), 0.5, mu, tau, m, 1.0 / m as f64)
                .map_err(CliError::from_core)?;
            let mut rate_cfg = cfg.clone();
            rate_cfg.step = rate_step;
            let rep = with_op!(&inst.problem, op => verify_linear_rate(op, &rate_cfg, &xs, mu, 0.5, args.seeds, 1.05))
                .map_err(CliError::from_core)?;
            sink.comment(&format!("linear rate: eta={:e} rate_base={:.12} seeds={}", rate_cfg.step.eta, rep.rate_base, rep.seeds))?;
            sink.comment("verify")?;
            let rows = rep.rows.iter().map(|r| {
                [r.epoch.to_string(), format!("{:e}", r.mean_dist_sq), format!("{:e}", r.envelope), format!("{:.6}", r.mean_dist_sq / r.envelope)]
            });
            sink.table(["epoch", "mean_dist_sq", "envelope", "ratio"], rows)?;
            if !rep.passed() {
                failure = Some(format!("linear rate envelope exceeded, worst ratio {:.4}", rep.worst_ratio()));
            }
        }
    }
    sink.finish()?;
    match failure {
        Some(msg) => Err(CliError::Check(msg)),
        None => Ok(()),
    }
}

fn engine_config(args: &RunArgs, inst: &Instance) -> Result<EngineConfig, CliError> {
    let m = inst.num_blocks();
    let step = args.step.policy(m, args.tau.unwrap_or(args.agents))?;
    let mut cfg = EngineConfig::new(args.agents, m, step, args.epochs, args.seed);
    cfg.scheme = args.scheme.map(Into::into);
    cfg.yield_interval = args.yield_every;
    if let Some(xs) = &inst.x_star {
        cfg = cfg.with_x_star(xs.clone());
    }
    Ok(cfg)
}

pub fn run(args: &RunArgs) -> Result<(), CliError> {
    if args.agents == 0 {
        return Err(CliError::Config("--agents must be at least 1".into()));
    }
    let inst = args.problem.build()?;
    let cfg = engine_config(args, &inst)?;
    let metrics = with_op!(&inst.problem, op => run_engine(op, &cfg)).map_err(CliError::from_core)?;
    let baseline = match args.baseline {
        Some(BaselineArg::Sync) => Some(with_op!(&inst.problem, op => run_sync_engine(op, &cfg)).map_err(CliError::from_core)?),
        None => None,
    };

    let mut sink = Sink::open(args.out.as_deref())?;
    header(&mut sink, "run", args, &inst)?;
    sink.echo("resolved", &serde_json::json!({ "eta": cfg.step.eta, "scheme": cfg.scheme, "agents": cfg.agents }))?;
    sink.metrics(&metrics)?;
    if let Some(b) = baseline {
        for (mode, m) in [("async", &metrics), ("sync", &b)] {
            sink.comment(&format!(
                "comparison: mode={mode} wall_s={:.6} final_residual={:e} objective={}",
                m.summary.total_ms / 1e3,
                m.summary.final_residual,
                m.last().and_then(|r| r.objective).map(|v| format!("{v:e}")).unwrap_or_default()
            ))?;
        }
    }
    sink.finish()
}

#[derive(Serialize)]
struct Check {
    property: &'static str,
    passed: Option<bool>,
    margin: f64,
    detail: String,
}

impl Check {
    fn skipped(property: &'static str, why: &str) -> Self {
        Check { property, passed: None, margin: f64::NAN, detail: format!("skipped: {why}") }
    }
}

fn quasi_contraction_sweep(inst: &Instance, samples: usize, seed: u64) -> Check {
    let (Problem::QuadraticL1(op), Some((mu, l))) = (&inst.problem, inst.quadratic_bounds) else {
        return Check::skipped("quasi_contraction", "needs --problem quadratic-l1");
    };
    let Some(xs) = &inst.x_star else {
        return Check::skipped("quasi_contraction", "no reference solution");
    };
    let bound = match quasi_contraction_modulus(op.gamma(), mu, l) {
        Ok(b) => b,
        Err(e) => return Check { property: "quasi_contraction", passed: Some(false), margin: f64::NAN, detail: e.to_string() },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-3.0..2.0));
        let x: Vec<f64> = xs.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
        let tx = op.apply_t(&x);
        let num: f64 = tx.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = x.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    Check {
        property: "quasi_contraction",
        passed: Some(worst <= bound + 1e-9),
        margin: bound - worst,
        detail: format!("max factor {worst:.6} vs bound {bound:.6} over {samples} points"),
    }
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let mut inst = args.problem.build()?;
    if inst.dim() > args.max_dim {
        return Err(CliError::Config(format!(
            "problem dimension {} exceeds the oracle cap {} (raise --max-dim)",
            inst.dim(),
            args.max_dim
        )));
    }
    let m = inst.num_blocks();
    let x_star = inst.solution(true);
    let mut checks = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let rep = with_op!(&inst.problem, op => check_cocoercivity(op, args.points, 1.0, &mut rng));
    checks.push(Check {
        property: "cocoercivity",
        passed: Some(rep.passed()),
        margin: rep.worst_margin,
        detail: format!("{} violations in {} pairs", rep.violations, rep.samples),
    });

    match &x_star {
        Some(xs) if !matches!(inst.problem, Problem::Expansive(_)) => {
            let step = StepSizePolicy::fejer_safe(m, 1.0 / m as f64, args.tau, args.c).map_err(CliError::from_core)?;
            let cfg = SimConfig::new(m, step, 1, args.seed).with_delay(DelayPolicy::UniformRandom { tau: args.tau });
            let rep = with_op!(&inst.problem, op => verify_fundamental_inequality(op, &cfg, xs, args.steps, args.trials))
                .map_err(CliError::from_core)?;
            let worst = rep.steps.iter().map(|s| s.margin()).fold(f64::INFINITY, f64::min);
            checks.push(Check {
                property: "fundamental_inequality",
                passed: Some(rep.passed()),
                margin: worst,
                detail: format!(
                    "tau={} {} steps x {} trials; {} Monte-Carlo, {} exact violations",
                    args.tau, args.steps, args.trials, rep.mc_violations, rep.exact_violations
                ),
            });
        }
        _ => checks.push(Check::skipped("fundamental_inequality", "no fixed point available")),
    }

    match (inst.strong_monotonicity(), &x_star) {
        (Some(mu), Some(xs)) => {
            let step = StepSizePolicy::linear_rate(default_rho(args.tau), 0.5, mu, args.tau, m, 1.0 / m as f64)
                .map_err(CliError::from_core)?;
            let cfg = SimConfig::new(m, step, args.epochs, args.seed)
                .with_delay(DelayPolicy::UniformRandom { tau: args.tau })
                .with_x0(vec![1.0; inst.dim()]);
            let rep = with_op!(&inst.problem, op => verify_linear_rate(op, &cfg, xs, mu, 0.5, args.seeds, 1.05))
                .map_err(CliError::from_core)?;
            checks.push(Check {
                property: "linear_rate",
                passed: Some(rep.passed()),
                margin: 1.0 - rep.worst_ratio(),
                detail: format!("mu={mu:.4} {} seeds, worst mean/envelope {:.4}", args.seeds, rep.worst_ratio()),
            });
        }
        _ => checks.push(Check::skipped("linear_rate", "needs a jacobi problem")),
    }

    checks.push(quasi_contraction_sweep(&inst, args.points, args.seed));

    let mut sink = Sink::open(args.out.as_deref())?;
    header(&mut sink, "verify", args, &inst)?;
    let rows = checks.iter().map(|c| {
        let status = match c.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "skip",
        };
        [c.property.to_string(), status.to_string(), format!("{:e}", c.margin), c.detail.clone()]
    });
    sink.table(["property", "status", "margin", "detail"], rows)?;
    sink.finish()?;
    let failed: Vec<&str> = checks.iter().filter(|c| c.passed == Some(false)).map(|c| c.property).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("failed: {}", failed.join(", "))))
    }
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.agents.is_empty() || args.agents.contains(&0) {
        return Err(CliError::Config("--agents needs positive counts".into()));
    }
    let inst = args.problem.build()?;
    let m = inst.num_blocks();
    let tau = args.agents.iter().copied().max().unwrap_or(1);
    let step = args.step.policy(m, tau)?;
    let base = EngineConfig::new(1, m, step, args.epochs, args.seed);
    let with_sync = args.baseline == Some(BaselineArg::Sync);
    let rows = with_op!(&inst.problem, op => measure_speedup(op, &base, &args.agents, with_sync))
        .map_err(CliError::from_core)?;
    let name = serde_json::to_value(args.problem.problem)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();

    let mut sink = Sink::open(args.out.as_deref())?;
    header(&mut sink, "bench", args, &inst)?;
    sink.table(
        ["problem", "agents", "mode", "wall_s", "speedup"],
        rows.iter().map(|r| [name.clone(), r.agents.to_string(), r.mode.to_string(), format!("{:.6}", r.wall_s), format!("{:.4}", r.speedup)]),
    )?;
    sink.finish()
}
