use std::path::{Path, PathBuf};

use asyncoord::data::{
    gen_diag_dominant, gen_graph, gen_jacobi_system, gen_logistic, gen_sparse_logistic, partition_blocks, read_libsvm,
    GraphKind, LabeledDataset,
};
use asyncoord::linalg::symmetric_eigenvalues;
use asyncoord::operators::{
    ActivationMode, ConsensusAdmmOp, ConvexSet, DecentralAdmmOp, DecentralGradOp, FbsOp, JacobiOp, LogisticLoss,
    PrsFeasibilityOp, QuadLocal, QuadraticLoss, Regularizer, SmoothPart,
};
use asyncoord::{BlockLayout, ProblemOperator, StateView};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::CliError;

/// Environment variable naming the directory searched for dataset names.
pub const DATA_DIR_ENV: &str = "ASYNCOORD_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Jacobi iteration for a generated diagonally dominant system
    Jacobi,
    /// l1-regularised logistic regression by forward-backward splitting
    Logistic,
    /// Logistic regression on sparse data with a few heavy columns
    Imbalance,
    /// Strongly convex quadratic plus l1, by forward-backward splitting
    QuadraticL1,
    /// Consensus ADMM over quadratic local objectives
    Consensus,
    /// Decentralized ADMM over a graph
    DecentralAdmm,
    /// Decentralized gradient descent over a graph
    DecentralGrad,
    /// Peaceman-Rachford feasibility for random halfspaces
    Feasibility,
    /// An expansive map, for testing the checks themselves
    Expansive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphArg {
    Path,
    Star,
    Ring,
    ErdosRenyi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Agent,
    Edge,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProblemArgs {
    /// Problem to solve
    #[arg(long, value_enum)]
    pub problem: ProblemKind,

    /// Number of unknowns (jacobi, quadratic-l1, feasibility)
    #[arg(long, default_value_t = 100)]
    pub n: usize,

    /// Half bandwidth of generated matrices
    #[arg(long, default_value_t = 5)]
    pub bandwidth: usize,

    /// Spectral norm of the Jacobi iteration matrix; default is a diagonally dominant system
    #[arg(long)]
    pub target_norm: Option<f64>,

    /// Seed for generated problem data
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,

    /// LIBSVM file, or a name looked up in $ASYNCOORD_DATA_DIR
    #[arg(long)]
    pub data: Option<String>,

    /// Generated samples when no --data is given
    #[arg(long, default_value_t = 200)]
    pub samples: usize,

    /// Generated features when no --data is given
    #[arg(long, default_value_t = 100)]
    pub features: usize,

    /// l1 weight
    #[arg(long, default_value_t = 1e-4)]
    pub lambda: f64,

    /// Forward-backward step as a multiple of 1/L; must lie in (0, 2)
    #[arg(long, default_value_t = 1.9)]
    pub gamma_factor: f64,

    /// Target number of coordinates per block
    #[arg(long, default_value_t = 1)]
    pub block_size: usize,

    /// Agents (consensus) or graph nodes (decentral-*)
    #[arg(long, default_value_t = 5)]
    pub nodes: usize,

    /// Dimension of each local variable
    #[arg(long, default_value_t = 2)]
    pub local_dim: usize,

    #[arg(long, value_enum, default_value_t = GraphArg::Path)]
    pub graph: GraphArg,

    /// Edge probability for erdos-renyi graphs
    #[arg(long, default_value_t = 0.3)]
    pub edge_prob: f64,

    /// Activation unit for decentral-admm
    #[arg(long, value_enum, default_value_t = ModeArg::Agent)]
    pub mode: ModeArg,

    /// Penalty parameter of the ADMM and decentralized problems
    #[arg(long, default_value_t = 1.0)]
    pub penalty: f64,

    /// Number of halfspaces (feasibility)
    #[arg(long, default_value_t = 3)]
    pub sets: usize,
}

/// `T x = -2x`.
pub struct Expansive(BlockLayout);

impl ProblemOperator for Expansive {
    fn layout(&self) -> &BlockLayout {
        &self.0
    }

    fn name(&self) -> &str {
        "expansive"
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        for (o, j) in out.iter_mut().zip(self.0.block(i)) {
            *o = 3.0 * x.get(j);
        }
    }
}

pub enum Problem {
    Jacobi(JacobiOp),
    Logistic(FbsOp<LogisticLoss>),
    QuadraticL1(FbsOp<QuadraticLoss>),
    Consensus(ConsensusAdmmOp),
    DecentralAdmm(DecentralAdmmOp),
    DecentralGrad(DecentralGradOp),
    Feasibility(PrsFeasibilityOp),
    Expansive(Expansive),
}

/// Runs `$body` with `$op` bound to the concrete operator.
#[macro_export]
macro_rules! with_op {
    ($problem:expr, $op:ident => $body:expr) => {
        match $problem {
            $crate::problem::Problem::Jacobi($op) => $body,
            $crate::problem::Problem::Logistic($op) => $body,
            $crate::problem::Problem::QuadraticL1($op) => $body,
            $crate::problem::Problem::Consensus($op) => $body,
            $crate::problem::Problem::DecentralAdmm($op) => $body,
            $crate::problem::Problem::DecentralGrad($op) => $body,
            $crate::problem::Problem::Feasibility($op) => $body,
            $crate::problem::Problem::Expansive($op) => $body,
        }
    };
}

/// A built problem plus what is known about its solution.
pub struct Instance {
    pub problem: Problem,
    pub x_star: Option<Vec<f64>>,
    /// Modulus and curvature bounds for the quasi-contraction sweep.
    pub quadratic_bounds: Option<(f64, f64)>,
    pub data_path: Option<PathBuf>,
}

fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Finds a dataset by path, then by name under [`DATA_DIR_ENV`].
pub fn resolve_data(name: &str) -> Result<PathBuf, CliError> {
    let direct = Path::new(name);
    if direct.is_file() {
        return Ok(direct.to_path_buf());
    }
    let mut searched = vec![direct.display().to_string()];
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        let dir = PathBuf::from(dir);
        for candidate in [name.to_string(), format!("{name}.libsvm"), format!("{name}.svm")] {
            let p = dir.join(&candidate);
            if p.is_file() {
                return Ok(p);
            }
            searched.push(p.display().to_string());
        }
    }
    Err(CliError::Data(format!("dataset '{name}' not found (searched {})", searched.join(", "))))
}

fn layout_for(n: usize, block_size: usize) -> Result<BlockLayout, CliError> {
    if block_size <= 1 {
        Ok(BlockLayout::scalar(n))
    } else {
        partition_blocks(n, block_size).map_err(|e| config(e.to_string()))
    }
}

fn locals(m: usize, d: usize, seed: u64) -> Result<Vec<QuadLocal>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let a = rng.random_range(0.5..3.0);
            let c = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            QuadLocal::new(a, c).map_err(|e| config(e.to_string()))
        })
        .collect()
}

fn graph(args: &ProblemArgs) -> Result<asyncoord::data::GraphSpec, CliError> {
    let kind = match args.graph {
        GraphArg::Path => GraphKind::Path,
        GraphArg::Star => GraphKind::Star,
        GraphArg::Ring => GraphKind::Ring,
        GraphArg::ErdosRenyi => GraphKind::ErdosRenyi(args.edge_prob),
    };
    gen_graph(kind, args.nodes, args.data_seed).map_err(|e| config(e.to_string()))
}

fn logistic_data(args: &ProblemArgs) -> Result<(LabeledDataset, Option<PathBuf>), CliError> {
    match &args.data {
        Some(name) => {
            let path = resolve_data(name)?;
            let ds = read_libsvm(&path).map_err(|e| CliError::Data(e.to_string()))?;
            Ok((ds, Some(path)))
        }
        None => {
            let ds = if args.problem == ProblemKind::Imbalance {
                gen_sparse_logistic(args.samples, args.features, 0.02, args.features / 10, 20.0, args.data_seed)
            } else {
                gen_logistic(args.samples, args.features, args.features, args.data_seed)
            };
            Ok((ds.map_err(|e| config(e.to_string()))?, None))
        }
    }
}

/// Serial Krasnosel'skii-Mann iteration to a tight residual, used as the
/// reference solution when none is known in closed form.
pub fn reference_solution<O: ProblemOperator>(op: &O) -> Option<Vec<f64>> {
    let mut x = vec![0.0; op.dim()];
    for _ in 0..200_000 {
        let s = op.eval_s_full(&x);
        let r = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !r.is_finite() {
            return None;
        }
        if r < 1e-13 {
            return Some(x);
        }
        x.iter_mut().zip(&s).for_each(|(a, b)| *a -= 0.9 * b);
    }
    None
}

impl ProblemArgs {
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.gamma_factor > 0.0 && self.gamma_factor < 2.0) {
            return Err(config(format!("--gamma-factor must lie in (0, 2), got {}", self.gamma_factor)));
        }
        if !(self.lambda >= 0.0) {
            return Err(config(format!("--lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.n == 0 || self.samples == 0 || self.features == 0 || self.local_dim == 0 {
            return Err(config("sizes must be positive"));
        }
        if matches!(self.problem, ProblemKind::Consensus | ProblemKind::DecentralAdmm | ProblemKind::DecentralGrad)
            && self.nodes < 2
        {
            return Err(config("--nodes must be at least 2"));
        }
        if !(self.penalty > 0.0) {
            return Err(config("--penalty must be positive"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Instance, CliError> {
        self.validate()?;
        let wrap = |e: asyncoord::Error| config(e.to_string());
        let mut inst = Instance {
            problem: Problem::Expansive(Expansive(BlockLayout::scalar(1))),
            x_star: None,
            quadratic_bounds: None,
            data_path: None,
        };
        match self.problem {
            ProblemKind::Jacobi => {
                let sys = match self.target_norm {
                    Some(t) => gen_jacobi_system(self.n, self.bandwidth, self.data_seed, t),
                    None => gen_diag_dominant(self.n, self.bandwidth, self.data_seed),
                }
                .map_err(wrap)?;
                let layout = layout_for(self.n, self.block_size)?;
                inst.problem = Problem::Jacobi(JacobiOp::with_layout(sys.a, sys.b, layout).map_err(wrap)?);
                inst.x_star = Some(sys.x_star);
            }
            ProblemKind::Logistic | ProblemKind::Imbalance => {
                let (ds, path) = logistic_data(self)?;
                let n = ds.n_features();
                let g = LogisticLoss::new(&ds);
                let gamma = self.gamma_factor / g.lipschitz();
                let layout = layout_for(n, self.block_size)?;
                inst.problem = Problem::Logistic(FbsOp::new(g, Regularizer::L1(self.lambda), gamma, layout).map_err(wrap)?);
                inst.data_path = path;
            }
            ProblemKind::QuadraticL1 => {
                let sys = gen_diag_dominant(self.n, self.bandwidth, self.data_seed).map_err(wrap)?;
                let eig = symmetric_eigenvalues(self.n, &sys.a.to_dense());
                let mu = eig.iter().copied().fold(f64::INFINITY, f64::min);
                let l = eig.iter().copied().fold(0.0, f64::max);
                let g = QuadraticLoss::new(sys.a, sys.b).map_err(wrap)?.with_lipschitz(l);
                let layout = layout_for(self.n, self.block_size)?;
                let op = FbsOp::new(g, Regularizer::L1(self.lambda), self.gamma_factor / l, layout).map_err(wrap)?;
                inst.problem = Problem::QuadraticL1(op);
                inst.quadratic_bounds = Some((mu, l));
            }
            ProblemKind::Consensus => {
                let ls = locals(self.nodes, self.local_dim, self.data_seed)?;
                inst.problem = Problem::Consensus(ConsensusAdmmOp::new(ls, self.penalty).map_err(wrap)?);
            }
            ProblemKind::DecentralAdmm => {
                let ls = locals(self.nodes, self.local_dim, self.data_seed)?;
                let mode = match self.mode {
                    ModeArg::Agent => ActivationMode::Agent,
                    ModeArg::Edge => ActivationMode::Edge,
                };
                inst.problem = Problem::DecentralAdmm(DecentralAdmmOp::new(ls, graph(self)?, self.penalty, mode).map_err(wrap)?);
            }
            ProblemKind::DecentralGrad => {
                let ls = locals(self.nodes, self.local_dim, self.data_seed)?;
                inst.problem = Problem::DecentralGrad(DecentralGradOp::new(ls, graph(self)?, self.penalty).map_err(wrap)?);
            }
            ProblemKind::Feasibility => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.data_seed);
                let anchor: Vec<f64> = (0..self.n).map(|_| rng.random_range(2.0..5.0)).collect();
                let sets = (0..self.sets)
                    .map(|_| {
                        let a: Vec<f64> = (0..self.n).map(|_| rng.random_range(-1.0..1.0)).collect();
                        let c = a.iter().zip(&anchor).map(|(u, v)| u * v).sum::<f64>() + rng.random_range(0.0..0.5);
                        ConvexSet::Halfspace { a, c }
                    })
                    .collect();
                inst.problem = Problem::Feasibility(PrsFeasibilityOp::new(sets).map_err(wrap)?);
            }
            ProblemKind::Expansive => {
                inst.problem = Problem::Expansive(Expansive(BlockLayout::scalar(self.n)));
            }
        }
        Ok(inst)
    }
}

impl Instance {
    pub fn dim(&self) -> usize {
        with_op!(&self.problem, op => op.dim())
    }

    pub fn num_blocks(&self) -> usize {
        with_op!(&self.problem, op => op.num_blocks())
    }

    /// The known solution, or a serial reference when `compute` is set.
    pub fn solution(&mut self, compute: bool) -> Option<Vec<f64>> {
        if self.x_star.is_none() && compute && !matches!(self.problem, Problem::Expansive(_)) {
            self.x_star = with_op!(&self.problem, op => reference_solution(op));
            if self.x_star.is_none() {
                log::warn!("reference solution did not converge; distance columns stay empty");
            }
        }
        self.x_star.clone()
    }

    /// `1 - ‖M‖₂` for Jacobi problems.
    pub fn strong_monotonicity(&self) -> Option<f64> {
        match &self.problem {
            Problem::Jacobi(op) => {
                let c = op.m_norm();
                (c < 1.0).then_some(1.0 - c)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrap {
        #[command(flatten)]
        args: ProblemArgs,
    }

    fn args(extra: &[&str]) -> ProblemArgs {
        let mut argv = vec!["test"];
        argv.extend(extra);
        Wrap::parse_from(argv).args
    }

    #[test]
    fn every_kind_builds_with_small_sizes() {
        for kind in ProblemKind::value_variants() {
            let name = kind.to_possible_value().unwrap().get_name().to_string();
            let a = args(&["--problem", &name, "--n", "12", "--samples", "30", "--features", "10", "--nodes", "3"]);
            let inst = a.build().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(inst.dim() > 0 && inst.num_blocks() > 0, "{name}");
            assert!(inst.num_blocks() <= inst.dim(), "{name}");
        }
    }

    #[test]
    fn block_size_groups_coordinates() {
        let inst = args(&["--problem", "jacobi", "--n", "40", "--block-size", "8"]).build().unwrap();
        assert_eq!(inst.dim(), 40);
        assert_eq!(inst.num_blocks(), 5);
    }

    #[test]
    fn jacobi_solution_is_a_fixed_point() {
        let inst = args(&["--problem", "jacobi", "--n", "30"]).build().unwrap();
        let xs = inst.x_star.clone().unwrap();
        let s = with_op!(&inst.problem, op => op.eval_s_full(&xs));
        assert!(s.iter().all(|v| v.abs() < 1e-10));
        let mu = inst.strong_monotonicity().unwrap();
        assert!(mu > 0.0 && mu < 1.0);
    }

    #[test]
    fn reference_solution_solves_consensus() {
        let mut inst = args(&["--problem", "consensus", "--nodes", "4"]).build().unwrap();
        let xs = inst.solution(true).unwrap();
        let s = with_op!(&inst.problem, op => op.eval_s_full(&xs));
        assert!(s.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12);
    }

    #[test]
    fn expansive_has_no_reference_solution() {
        let mut inst = args(&["--problem", "expansive", "--n", "4"]).build().unwrap();
        assert!(inst.solution(true).is_none());
    }

    #[test]
    fn gamma_factor_outside_range_is_rejected() {
        for g in ["2.0", "2.5", "0"] {
            let err = args(&["--problem", "quadratic-l1", "--gamma-factor", g]).build().err().unwrap();
            assert!(matches!(err, CliError::Config(_)), "{g}");
        }
    }

    #[test]
    fn resolve_data_tries_path_then_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.libsvm");
        std::fs::write(&file, "+1 1:1\n").unwrap();
        assert_eq!(resolve_data(file.to_str().unwrap()).unwrap(), file);
        assert!(matches!(resolve_data("/definitely/not/here"), Err(CliError::Data(_))));
    }
}
