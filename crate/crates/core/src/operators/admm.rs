//! ADMM for `min f(x) + g(y)  s.t.  Ax + By = b`, run as Douglas–Rachford
//! splitting on the dual `min_w f*(Aᵀw) + g*(Bᵀw) - ⟨w, b⟩`.

use serde::{Deserialize, Serialize};

use super::soft_threshold;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};
use crate::linalg::{dot, norm, solve_dense};

/// Primal term paired with its linear map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PieceKind {
    Zero,
    /// `½ uᵀPu + qᵀu`, `P` symmetric positive semidefinite, row-major.
    Quadratic { p: Vec<f64>, q: Vec<f64> },
    /// `λ‖u‖₁`
    L1 { lambda: f64 },
}

/// One side of the constraint: a term `h(u)`, a map `M` (rows × cols,
/// row-major) and an offset `c`, entering as `M u - c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPiece {
    pub kind: PieceKind,
    pub rows: usize,
    pub cols: usize,
    pub map: Vec<f64>,
    pub offset: Vec<f64>,
}

const INNER_TOL: f64 = 1e-10;
const INNER_MAX_ITER: usize = 200_000;

impl DualPiece {
    pub fn new(kind: PieceKind, rows: usize, cols: usize, map: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if map.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: map.len() });
        }
        if offset.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: offset.len() });
        }
        match &kind {
            PieceKind::Quadratic { p, q } => {
                if p.len() != cols * cols || q.len() != cols {
                    return Err(Error::DimensionMismatch { expected: cols, got: q.len() });
                }
            }
            PieceKind::L1 { lambda } if !(*lambda >= 0.0) => {
                return Err(Error::invalid("l1 weight must be nonnegative"));
            }
            _ => {}
        }
        Ok(DualPiece { kind, rows, cols, map, offset })
    }

    /// `M = s·I` of size `n`.
    pub fn scaled_identity(kind: PieceKind, n: usize, s: f64) -> Result<Self> {
        let mut map = vec![0.0; n * n];
        for k in 0..n {
            map[k * n + k] = s;
        }
        Self::new(kind, n, n, map, vec![0.0; n])
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(&self.map[r * self.cols..(r + 1) * self.cols], u)).collect()
    }

    fn apply_t(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(&self.map[r * self.cols..(r + 1) * self.cols]) {
                *o += m * vr;
            }
        }
        out
    }

    fn diagonal_map(&self) -> Option<Vec<f64>> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut d = vec![0.0; n];
        for r in 0..n {
            for c in 0..n {
                let v = self.map[r * n + c];
                if r == c {
                    if v == 0.0 {
                        return None;
                    }
                    d[r] = v;
                } else if v != 0.0 {
                    return None;
                }
            }
        }
        Some(d)
    }

    pub fn value(&self, u: &[f64]) -> f64 {
        match &self.kind {
            PieceKind::Zero => 0.0,
            PieceKind::Quadratic { p, q } => {
                let n = self.cols;
                let pu: Vec<f64> = (0..n).map(|r| dot(&p[r * n..(r + 1) * n], u)).collect();
                0.5 * dot(u, &pu) + dot(q, u)
            }
            PieceKind::L1 { lambda } => lambda * u.iter().map(|v| v.abs()).sum::<f64>(),
        }
    }

    /// `u⁺ ∈ argmin h(u) - ⟨z, Mu - c⟩ + (γ/2)‖Mu - c‖²` and
    /// `z⁺ = z - γ(Mu⁺ - c)`, which equals `prox_{γ d}(z)` for the dual term
    /// `d(w) = h*(Mᵀw) - ⟨w, c⟩`.
    pub fn prox_dual(&self, z: &[f64], gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if z.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, got: z.len() });
        }
        let u = self.solve_subproblem(z, gamma)?;
        let mu = self.apply(&u);
        let zp = z.iter().zip(&mu).zip(&self.offset).map(|((zi, m), c)| zi - gamma * (m - c)).collect();
        Ok((u, zp))
    }

    fn solve_subproblem(&self, z: &[f64], gamma: f64) -> Result<Vec<f64>> {
        let n = self.cols;
        // linear term of the smooth part: -Mᵀ(z + γc)
        let shifted: Vec<f64> = z.iter().zip(&self.offset).map(|(zi, c)| zi + gamma * c).collect();
        let rhs = self.apply_t(&shifted);
        match &self.kind {
            PieceKind::Zero | PieceKind::Quadratic { .. } => {
                let mut h = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        h[a * n + b] = gamma * (0..self.rows).map(|r| self.map[r * n + a] * self.map[r * n + b]).sum::<f64>();
                    }
                }
                let mut r = rhs.clone();
                if let PieceKind::Quadratic { p, q } = &self.kind {
                    h.iter_mut().zip(p).for_each(|(a, b)| *a += b);
                    r.iter_mut().zip(q).for_each(|(a, b)| *a -= b);
                }
                let u = solve_dense(n, &h, &r).ok_or(Error::InnerSolver { residual: f64::INFINITY, iterations: 0 })?;
                let hu: Vec<f64> = (0..n).map(|a| dot(&h[a * n..(a + 1) * n], &u)).collect();
                let res = norm(&hu.iter().zip(&r).map(|(a, b)| a - b).collect::<Vec<_>>());
                if !(res <= INNER_TOL * (1.0 + norm(&r))) {
                    return Err(Error::InnerSolver { residual: res, iterations: 1 });
                }
                Ok(u)
            }
            PieceKind::L1 { lambda } => {
                if let Some(d) = self.diagonal_map() {
                    return Ok(rhs
                        .iter()
                        .zip(&d)
                        .map(|(r, m)| soft_threshold(r / (gamma * m * m), lambda / (gamma * m * m)))
                        .collect());
                }
                self.fista_l1(&rhs, gamma, *lambda)
            }
        }
    }

    /// Minimises `λ‖u‖₁ + (γ/2)‖Mu‖² - ⟨rhs, u⟩` by accelerated proximal
    /// gradient; stops on the prox-gradient mapping norm.
    fn fista_l1(&self, rhs: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
        let n = self.cols;
        let lip = {
            let est = crate::linalg::spectral_norm(
                self.rows,
                n,
                |v, o| o.copy_from_slice(&self.apply(v)),
                |v, o| o.copy_from_slice(&self.apply_t(v)),
                1e-12,
                10_000,
                7,
            );
            gamma * est.value * est.value * 1.01
        };
        if lip == 0.0 {
            return Err(Error::InnerSolver { residual: f64::INFINITY, iterations: 0 });
        }
        let step = 1.0 / lip;
        let grad = |u: &[f64]| -> Vec<f64> {
            let mtmu = self.apply_t(&self.apply(u));
            mtmu.iter().zip(rhs).map(|(a, r)| gamma * a - r).collect()
        };
        let prox_step = |y: &[f64]| -> Vec<f64> {
            let g = grad(y);
            y.iter().zip(&g).map(|(yi, gi)| soft_threshold(yi - step * gi, step * lambda)).collect()
        };
        let mut u = vec![0.0; n];
        let mut y = u.clone();
        let mut t = 1.0f64;
        let mut res = f64::INFINITY;
        for it in 1..=INNER_MAX_ITER {
            let un = prox_step(&y);
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = un.iter().zip(&u).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
            u = un;
            t = tn;
            if it % 10 == 0 {
                let mapped = prox_step(&u);
                res = norm(&u.iter().zip(&mapped).map(|(a, b)| a - b).collect::<Vec<_>>()) / step;
                if res < INNER_TOL * (1.0 + norm(rhs)) {
                    return Ok(mapped);
                }
            }
        }
        Err(Error::InnerSolver { residual: res, iterations: INNER_MAX_ITER })
    }
}

/// The ADMM dual operator `S z = w_g - w_f` with
/// `w_g = prox_{γ d_g}(z)` and `w_f = prox_{γ d_f}(2w_g - z)`.
#[derive(Debug, Clone)]
pub struct AdmmDualOp {
    f: DualPiece,
    g: DualPiece,
    gamma: f64,
    layout: BlockLayout,
}

/// Intermediate quantities of one naive ADMM evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmEval {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w_f: Vec<f64>,
    pub w_g: Vec<f64>,
}

impl AdmmDualOp {
    /// `f` pairs with `A` (its `offset` must be zero), `g` with `B` and `b`.
    pub fn new(f: DualPiece, g: DualPiece, gamma: f64) -> Result<Self> {
        if f.rows != g.rows {
            return Err(Error::DimensionMismatch { expected: f.rows, got: g.rows });
        }
        if f.offset.iter().any(|v| *v != 0.0) {
            return Err(Error::invalid("the offset b belongs to the g side"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let layout = BlockLayout::scalar(f.rows);
        Ok(AdmmDualOp { f, g, gamma, layout })
    }

    pub fn with_layout(mut self, layout: BlockLayout) -> Result<Self> {
        if layout.dim() != self.f.rows {
            return Err(Error::DimensionMismatch { expected: self.f.rows, got: layout.dim() });
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn prox_dual_f(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.f.prox_dual(z, self.gamma)
    }

    pub fn prox_dual_g(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.g.prox_dual(z, self.gamma)
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<AdmmEval> {
        let (y, w_g) = self.prox_dual_g(z)?;
        let v: Vec<f64> = w_g.iter().zip(z).map(|(w, zi)| 2.0 * w - zi).collect();
        let (x, w_f) = self.prox_dual_f(&v)?;
        Ok(AdmmEval { x, y, w_f, w_g })
    }

    /// `η (ŵ_f - ŵ_g)` restricted to block `i`.
    pub fn naive_step(&self, i: usize, zhat: &[f64], eta: f64) -> Result<Vec<f64>> {
        self.layout.check_block(i)?;
        let e = self.evaluate(zhat)?;
        Ok(self.layout.block(i).map(|j| eta * (e.w_f[j] - e.w_g[j])).collect())
    }

    /// Primal pair `(x, y)` recovered from a dual point.
    pub fn recover(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.evaluate(z).map(|e| (e.x, e.y))
    }

    pub fn primal_objective(&self, x: &[f64], y: &[f64]) -> f64 {
        self.f.value(x) + self.g.value(y)
    }
}

impl ProblemOperator for AdmmDualOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "admm_dual"
    }

    /// Dense evaluation: the naive form needs every coordinate of `ẑ`. A
    /// failed inner solve yields NaN entries.
    fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let mut z = vec![0.0; x.len()];
        x.read_range(0..x.len(), &mut z);
        match self.evaluate(&z) {
            Ok(e) => {
                for (o, j) in out.iter_mut().zip(self.layout.block(i)) {
                    *o = e.w_g[j] - e.w_f[j];
                }
            }
            Err(err) => {
                log::error!("ADMM inner solve failed: {err}");
                out.iter_mut().for_each(|o| *o = f64::NAN);
            }
        }
    }

    fn eval_s_full(&self, z: &[f64]) -> Vec<f64> {
        match self.evaluate(z) {
            Ok(e) => e.w_g.iter().zip(&e.w_f).map(|(g, f)| g - f).collect(),
            Err(_) => vec![f64::NAN; z.len()],
        }
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        self.recover(z).ok().map(|(x, y)| self.primal_objective(&x, &y))
    }
}
