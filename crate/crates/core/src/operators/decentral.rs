use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::QuadLocal;
use crate::data::GraphSpec;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, SamplingDistribution, StateView};
use crate::linalg::symmetric_eigenvalues;

/// Metropolis mixing weights `w_ij = 1/(1 + max(d_i, d_j))` on edges, with
/// the remainder on the diagonal. Dense, row-major.
pub fn metropolis_weights(graph: &GraphSpec) -> Vec<f64> {
    let m = graph.nodes();
    let mut w = vec![0.0; m * m];
    for &(i, j) in graph.edges() {
        let v = 1.0 / (1.0 + graph.degree(i).max(graph.degree(j)) as f64);
        w[i * m + j] = v;
        w[j * m + i] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[i * m + j]).sum();
        w[i * m + i] = 1.0 - off;
    }
    w
}

fn check_locals(locals: &[QuadLocal], nodes: usize) -> Result<usize> {
    if locals.len() != nodes {
        return Err(Error::DimensionMismatch { expected: nodes, got: locals.len() });
    }
    let d = locals.first().map(|l| l.c.len()).ok_or_else(|| Error::invalid("need at least one agent"))?;
    if locals.iter().any(|l| l.c.len() != d) {
        return Err(Error::invalid("all local variables must share one dimension"));
    }
    Ok(d)
}

/// Penalised decentralized gradient:
/// `S x = (2/L)(∇F(x) + (1/γ)(I - W)x)` with `L = max a_i + (1 - λ_min(W))/γ`.
/// Block `i` is agent `i`'s copy `x_i`.
#[derive(Debug, Clone)]
pub struct DecentralGradOp {
    locals: Vec<QuadLocal>,
    graph: GraphSpec,
    /// `(j, w_ij)` for `j ≠ i` with nonzero weight
    mixing: Vec<Vec<(usize, f64)>>,
    self_weight: Vec<f64>,
    gamma: f64,
    l: f64,
    d: usize,
    layout: BlockLayout,
}

impl DecentralGradOp {
    pub fn new(locals: Vec<QuadLocal>, graph: GraphSpec, gamma: f64) -> Result<Self> {
        let w = metropolis_weights(&graph);
        Self::with_weights(locals, graph, w, gamma)
    }

    /// `w` must be symmetric, row-stochastic and supported on the graph.
    pub fn with_weights(locals: Vec<QuadLocal>, graph: GraphSpec, w: Vec<f64>, gamma: f64) -> Result<Self> {
        let m = graph.nodes();
        let d = check_locals(&locals, m)?;
        if w.len() != m * m {
            return Err(Error::DimensionMismatch { expected: m * m, got: w.len() });
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let mut adjacent = vec![false; m * m];
        for &(i, j) in graph.edges() {
            adjacent[i * m + j] = true;
            adjacent[j * m + i] = true;
        }
        for i in 0..m {
            let row = &w[i * m..(i + 1) * m];
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!("mixing row {i} does not sum to 1")));
            }
            for j in 0..m {
                if (w[i * m + j] - w[j * m + i]).abs() > 1e-14 {
                    return Err(Error::invalid("mixing matrix must be symmetric"));
                }
                if i != j && w[i * m + j] != 0.0 && !adjacent[i * m + j] {
                    return Err(Error::invalid(format!("weight ({i}, {j}) is off the graph")));
                }
            }
        }
        let lam_min = symmetric_eigenvalues(m, &w).into_iter().fold(f64::INFINITY, f64::min);
        let a_max = locals.iter().map(|l| l.a).fold(0.0, f64::max);
        let l = a_max + (1.0 - lam_min) / gamma;
        let mixing = (0..m)
            .map(|i| (0..m).filter(|&j| j != i && w[i * m + j] != 0.0).map(|j| (j, w[i * m + j])).collect())
            .collect();
        let self_weight = (0..m).map(|i| w[i * m + i]).collect();
        let layout = BlockLayout::uniform(m, d);
        Ok(DecentralGradOp { locals, graph, mixing, self_weight, gamma, l, d, layout })
    }

    pub fn lipschitz(&self) -> f64 {
        self.l
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn locals(&self) -> &[QuadLocal] {
        &self.locals
    }

    pub fn point_dim(&self) -> usize {
        self.d
    }

    /// `∇f_i(x_i) + (1/γ)(x_i - Σ_j w_ij x̂_j)` with `x_i` read fresh.
    fn penalised_grad<X: StateView + ?Sized>(&self, i: usize, xi: &[f64], xhat: &X, out: &mut [f64]) {
        let li = &self.locals[i];
        let inv_g = 1.0 / self.gamma;
        for (k, o) in out.iter_mut().enumerate() {
            let mut mix = self.self_weight[i] * xi[k];
            for &(j, wij) in &self.mixing[i] {
                mix += wij * xhat.get(j * self.d + k);
            }
            *o = li.a * (xi[k] - li.c[k]) + inv_g * (xi[k] - mix);
        }
    }

    /// Mean of the agents' copies.
    pub fn average(&self, x: &[f64]) -> Vec<f64> {
        let m = self.locals.len() as f64;
        (0..self.d).map(|k| x.chunks(self.d).map(|c| c[k]).sum::<f64>() / m).collect()
    }
}

/// `x_i - (η/L)(∇f_i(x_i) + (1/γ)(x_i - Σ_j w_ij x̂_j))`, the new local copy.
pub fn decentral_grad_step<X: StateView + ?Sized>(
    op: &DecentralGradOp,
    i: usize,
    x_i: &[f64],
    xhat: &X,
    eta: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; op.d];
    op.penalised_grad(i, x_i, xhat, &mut g);
    x_i.iter().zip(&g).map(|(x, gk)| x - eta / op.l * gk).collect()
}

impl ProblemOperator for DecentralGradOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "decentral_gradient"
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let mut xi = vec![0.0; self.d];
        x.read_range(self.layout.block(i), &mut xi);
        self.penalised_grad(i, &xi, x, out);
        let s = 2.0 / self.l;
        out.iter_mut().for_each(|o| *o *= s);
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(x.chunks(self.d).zip(&self.locals).map(|(xi, l)| l.value(xi)).sum())
    }
}

/// Independent exponential clocks; the first to ring activates its agent.
#[derive(Debug, Clone)]
pub struct PoissonClocks {
    clocks: Vec<Exp<f64>>,
    dist: SamplingDistribution,
}

impl PoissonClocks {
    pub fn new(rates: &[f64]) -> Result<Self> {
        let dist = SamplingDistribution::from_rates(rates)?;
        let clocks = rates.iter().map(|&r| Exp::new(r).map_err(|e| Error::invalid(e.to_string()))).collect::<Result<_>>()?;
        Ok(PoissonClocks { clocks, dist })
    }

    /// Winning agent and its waiting time.
    pub fn next<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.clocks.iter().enumerate() {
            let t = c.sample(rng);
            if t < best.1 {
                best = (i, t);
            }
        }
        best
    }

    /// `P(i first) = λ_i / Σλ`.
    pub fn distribution(&self) -> &SamplingDistribution {
        &self.dist
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    Agent,
    Edge,
}

/// Decentralized ADMM for `min Σ f_i(x_i)  s.t.  x_i = y_e = x_j` on every
/// edge `e = (i, j)`, with duals `z_{e,i}` and `z_{e,j}` per edge.
///
/// Agent mode: block `i` holds `z_{e,i}` for `e ∈ E(i)` in incident order;
/// `x_i = (a_i c_i - Σ_e z_{e,other}) / (a_i + γ|E(i)|)` and
/// `S_{e,i} = (z_{e,i} + z_{e,other})/2 + γ x_i`.
///
/// Edge mode: block `e` holds `[z_{e,i}, z_{e,j}]`;
/// `x_i = (a_i c_i + Σ_e z_{e,i}) / (a_i + γ|E(i)|)` and
/// `S_{e,i} = (z_{e,i} + z_{e,j})/2 - γ x_j`, symmetrically for `j`.
#[derive(Debug, Clone)]
pub struct DecentralAdmmOp {
    locals: Vec<QuadLocal>,
    graph: GraphSpec,
    gamma: f64,
    mode: ActivationMode,
    d: usize,
    /// slot index (in units of `d`) of `(z_{e,lo}, z_{e,hi})`
    slots: Vec<(usize, usize)>,
    layout: BlockLayout,
}

impl DecentralAdmmOp {
    pub fn new(locals: Vec<QuadLocal>, graph: GraphSpec, gamma: f64, mode: ActivationMode) -> Result<Self> {
        let m = graph.nodes();
        let d = check_locals(&locals, m)?;
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        if let Some(i) = (0..m).find(|&i| graph.degree(i) == 0) {
            return Err(Error::invalid(format!("node {i} has no incident edges")));
        }
        let ne = graph.edges().len();
        let mut slots = vec![(0, 0); ne];
        let layout = match mode {
            ActivationMode::Agent => {
                let mut next = 0;
                for i in 0..m {
                    for &e in graph.incident(i) {
                        if graph.edges()[e].0 == i {
                            slots[e].0 = next;
                        } else {
                            slots[e].1 = next;
                        }
                        next += 1;
                    }
                }
                let sizes: Vec<usize> = (0..m).map(|i| graph.degree(i) * d).collect();
                BlockLayout::from_sizes(&sizes)?
            }
            ActivationMode::Edge => {
                for (e, s) in slots.iter_mut().enumerate() {
                    *s = (2 * e, 2 * e + 1);
                }
                BlockLayout::uniform(ne, 2 * d)
            }
        };
        Ok(DecentralAdmmOp { locals, graph, gamma, mode, d, slots, layout })
    }

    pub fn mode(&self) -> ActivationMode {
        self.mode
    }

    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn locals(&self) -> &[QuadLocal] {
        &self.locals
    }

    pub fn point_dim(&self) -> usize {
        self.d
    }

    /// Coordinate range of `z_{e,node}`.
    pub fn slot(&self, e: usize, node: usize) -> std::ops::Range<usize> {
        let (lo, hi) = self.graph.edges()[e];
        let s = if node == lo {
            self.slots[e].0
        } else {
            debug_assert_eq!(node, hi);
            self.slots[e].1
        };
        s * self.d..(s + 1) * self.d
    }

    fn other(&self, e: usize, node: usize) -> usize {
        let (a, b) = self.graph.edges()[e];
        if a == node {
            b
        } else {
            a
        }
    }

    /// The local minimiser `x_i` for the current duals.
    fn local_x<X: StateView + ?Sized>(&self, i: usize, z: &X) -> Vec<f64> {
        let mut v = vec![0.0; self.d];
        let mut buf = vec![0.0; self.d];
        for &e in self.graph.incident(i) {
            match self.mode {
                ActivationMode::Agent => {
                    z.read_range(self.slot(e, self.other(e, i)), &mut buf);
                    v.iter_mut().zip(&buf).for_each(|(a, b)| *a -= b);
                }
                ActivationMode::Edge => {
                    z.read_range(self.slot(e, i), &mut buf);
                    v.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
                }
            }
        }
        let mut x = vec![0.0; self.d];
        self.locals[i].ridge_argmin(&v, self.gamma * self.graph.degree(i) as f64, &mut x);
        x
    }

    /// Every agent's local solution.
    pub fn primal(&self, z: &[f64]) -> Vec<Vec<f64>> {
        (0..self.graph.nodes()).map(|i| self.local_x(i, z)).collect()
    }

    /// Block delta `-η (S ẑ)_i` for agent `i` (agent mode only).
    pub fn agent_step(&self, i: usize, zhat: &[f64], eta: f64) -> Result<Vec<f64>> {
        if self.mode != ActivationMode::Agent {
            return Err(Error::invalid("operator is in edge mode"));
        }
        self.step(i, zhat, eta)
    }

    /// Block delta `-η (S ẑ)_e` for edge `e` (edge mode only).
    pub fn edge_step(&self, e: usize, zhat: &[f64], eta: f64) -> Result<Vec<f64>> {
        if self.mode != ActivationMode::Edge {
            return Err(Error::invalid("operator is in agent mode"));
        }
        self.step(e, zhat, eta)
    }

    fn step(&self, b: usize, zhat: &[f64], eta: f64) -> Result<Vec<f64>> {
        self.layout.check_block(b)?;
        let mut out = vec![0.0; self.layout.block_size(b)];
        self.eval_s_block(b, zhat, &[][..], &mut out);
        out.iter_mut().for_each(|o| *o *= -eta);
        Ok(out)
    }
}

impl ProblemOperator for DecentralAdmmOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        match self.mode {
            ActivationMode::Agent => "decentral_admm_agent",
            ActivationMode::Edge => "decentral_admm_edge",
        }
    }

    fn eval_s_block<X, A>(&self, b: usize, z: &X, _aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let d = self.d;
        let mut own = vec![0.0; d];
        let mut far = vec![0.0; d];
        match self.mode {
            ActivationMode::Agent => {
                let xi = self.local_x(b, z);
                for (k, &e) in self.graph.incident(b).iter().enumerate() {
                    z.read_range(self.slot(e, b), &mut own);
                    z.read_range(self.slot(e, self.other(e, b)), &mut far);
                    for t in 0..d {
                        out[k * d + t] = 0.5 * (own[t] + far[t]) + self.gamma * xi[t];
                    }
                }
            }
            ActivationMode::Edge => {
                let (i, j) = self.graph.edges()[b];
                let xi = self.local_x(i, z);
                let xj = self.local_x(j, z);
                z.read_range(self.slot(b, i), &mut own);
                z.read_range(self.slot(b, j), &mut far);
                for t in 0..d {
                    let mean = 0.5 * (own[t] + far[t]);
                    out[t] = mean - self.gamma * xj[t];
                    out[d + t] = mean - self.gamma * xi[t];
                }
            }
        }
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        Some(self.primal(z).iter().zip(&self.locals).map(|(x, l)| l.value(x)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_graph, GraphKind};
    use crate::operators::ConsensusAdmmOp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn locals(m: usize) -> Vec<QuadLocal> {
        (0..m).map(|i| QuadLocal::new(1.0 + 0.5 * i as f64, vec![i as f64 - 1.0, (i * i) as f64 * 0.3]).unwrap()).collect()
    }

    fn iterate<O: ProblemOperator>(op: &O, iters: usize) -> Vec<f64> {
        let mut z = vec![0.0; op.dim()];
        for _ in 0..iters {
            let s = op.eval_s_full(&z);
            z.iter_mut().zip(&s).for_each(|(a, b)| *a -= 0.9 * b);
        }
        z
    }

    #[test]
    fn metropolis_is_doubly_stochastic() {
        let g = gen_graph(GraphKind::Star, 4, 0).unwrap();
        let w = metropolis_weights(&g);
        for i in 0..4 {
            let r: f64 = (0..4).map(|j| w[i * 4 + j]).sum();
            let c: f64 = (0..4).map(|j| w[j * 4 + i]).sum();
            assert!((r - 1.0).abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
        }
        assert_eq!(w[1], 0.25);
    }

    #[test]
    fn grad_matches_dense_oracle() {
        let g = gen_graph(GraphKind::Path, 3, 0).unwrap();
        let ls: Vec<QuadLocal> = [(1.0, 2.0), (2.0, -1.0), (0.5, 0.5)].iter().map(|&(a, c)| QuadLocal::new(a, vec![c]).unwrap()).collect();
        let gamma = 0.5;
        let op = DecentralGradOp::new(ls.clone(), g.clone(), gamma).unwrap();
        let w = metropolis_weights(&g);
        let x = [0.3, -0.2, 1.1];
        let s = op.eval_s_full(&x);
        // dense S = (2/L)(diag(a)(x - c) + (1/γ)(I - W)x)
        let l = op.lipschitz();
        for i in 0..3 {
            let mix: f64 = (0..3).map(|j| w[i * 3 + j] * x[j]).sum();
            let want = 2.0 / l * (ls[i].a * (x[i] - ls[i].c[0]) + (x[i] - mix) / gamma);
            assert!((s[i] - want).abs() < 1e-14);
        }
        let lam = nalgebra::DMatrix::from_row_slice(3, 3, &w).symmetric_eigen().eigenvalues.min();
        assert!((l - (2.0 + (1.0 - lam) / gamma)).abs() < 1e-12);
        let step = decentral_grad_step(&op, 1, &x[1..2], &x[..], 0.8);
        assert!((step[0] - (x[1] - 0.4 * s[1])).abs() < 1e-14);
    }

    #[test]
    fn grad_consensus_point_is_stationary_for_identical_locals() {
        let g = gen_graph(GraphKind::Ring, 5, 0).unwrap();
        let ls = vec![QuadLocal::new(1.0, vec![2.0]).unwrap(); 5];
        let op = DecentralGradOp::new(ls, g, 1.0).unwrap();
        assert!(op.eval_s_full(&[2.0; 5]).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn poisson_clock_frequencies() {
        let clocks = PoissonClocks::new(&[1.0, 2.0, 5.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[clocks.next(&mut rng).0] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let p = clocks.distribution().p(i);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(((*c as f64 / n as f64) - p).abs() < 5.0 * se);
        }
    }

    #[test]
    fn rejects_isolated_node() {
        let g = GraphSpec::new(3, vec![(0, 1)], None).unwrap();
        assert!(DecentralAdmmOp::new(locals(3), g, 1.0, ActivationMode::Agent).is_err());
    }

    #[test]
    fn admm_modes_reach_centralized_minimizer() {
        for kind in [GraphKind::Path, GraphKind::Star] {
            for m in 2..=5 {
                let ls = locals(m);
                let oracle = QuadLocal::centralized_minimizer(&ls);
                for mode in [ActivationMode::Agent, ActivationMode::Edge] {
                    let g = gen_graph(kind, m, 0).unwrap();
                    let op = DecentralAdmmOp::new(ls.clone(), g, 1.0, mode).unwrap();
                    let z = iterate(&op, 3000);
                    for x in op.primal(&z) {
                        for k in 0..2 {
                            assert!((x[k] - oracle[k]).abs() < 1e-8, "{kind:?} {m} {mode:?} {x:?} {oracle:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn agent_mode_on_two_nodes_is_consensus() {
        let ls = locals(2);
        let g = GraphSpec::new(2, vec![(0, 1)], None).unwrap();
        let dec = DecentralAdmmOp::new(ls.clone(), g, 0.8, ActivationMode::Agent).unwrap();
        let con = ConsensusAdmmOp::new(ls, 0.8).unwrap();
        let z = [0.3, -0.4, 1.2, 0.1];
        for (a, b) in dec.eval_s_full(&z).iter().zip(con.eval_s_full(&z)) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn edge_mode_two_nodes_matches_consensus() {
        let ls = locals(2);
        let g = GraphSpec::new(2, vec![(0, 1)], None).unwrap();
        let dec = DecentralAdmmOp::new(ls.clone(), g, 1.0, ActivationMode::Edge).unwrap();
        let con = ConsensusAdmmOp::new(ls, 1.0).unwrap();
        let xd = dec.primal(&iterate(&dec, 500));
        let xc = con.primal(&iterate(&con, 500));
        for (a, b) in xd.iter().zip(&xc) {
            for k in 0..2 {
                assert!((a[k] - b[k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn edge_symmetry() {
        let ls = vec![QuadLocal::new(1.5, vec![0.7]).unwrap(); 2];
        let g = GraphSpec::new(2, vec![(0, 1)], None).unwrap();
        let op = DecentralAdmmOp::new(ls, g, 1.0, ActivationMode::Edge).unwrap();
        let z = [0.4, 0.4];
        let x = op.primal(&z);
        assert_eq!(x[0], x[1]);
        let s = op.eval_s_full(&z);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn steps_touch_only_incident_duals() {
        let g = gen_graph(GraphKind::Path, 5, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for mode in [ActivationMode::Agent, ActivationMode::Edge] {
            let op = DecentralAdmmOp::new(locals(5), g.clone(), 1.0, mode).unwrap();
            let z: Vec<f64> = (0..op.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for b in 0..op.num_blocks() {
                let mut next = z.clone();
                let delta = match mode {
                    ActivationMode::Agent => op.agent_step(b, &z, 0.7).unwrap(),
                    ActivationMode::Edge => op.edge_step(b, &z, 0.7).unwrap(),
                };
                let r = op.layout().block(b);
                next[r.clone()].iter_mut().zip(&delta).for_each(|(a, d)| *a += d);
                for j in 0..z.len() {
                    if !r.contains(&j) {
                        assert_eq!(next[j].to_bits(), z[j].to_bits());
                    }
                }
                // every slot in the block belongs to an edge incident to b
                let incident: Vec<usize> = match mode {
                    ActivationMode::Agent => g.incident(b).iter().flat_map(|&e| op.slot(e, b)).collect(),
                    ActivationMode::Edge => {
                        let (i, j) = g.edges()[b];
                        op.slot(b, i).chain(op.slot(b, j)).collect()
                    }
                };
                assert_eq!(incident, r.collect::<Vec<_>>());
            }
        }
    }
}
