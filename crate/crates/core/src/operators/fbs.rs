use super::smooth::{LogisticLoss, SmoothPart};
use super::Regularizer;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};

/// Forward-backward splitting for `min f(x) + g(x)` with separable `f`:
/// `T = prox_{γf} ∘ (I - γ∇g)`, so
/// `(S x)_j = x_j - prox_{γ f_j}(x_j - γ ∂_j g(x))`.
#[derive(Debug, Clone)]
pub struct FbsOp<G> {
    g: G,
    reg: Regularizer,
    gamma: f64,
    layout: BlockLayout,
}

impl<G: SmoothPart> FbsOp<G> {
    /// Requires `γ ∈ (0, 2/L)`.
    pub fn new(g: G, reg: Regularizer, gamma: f64, layout: BlockLayout) -> Result<Self> {
        let l = g.lipschitz();
        if !(gamma > 0.0 && gamma < 2.0 / l) {
            return Err(Error::invalid(format!("gamma must lie in (0, 2/L) = (0, {:e}), got {gamma:e}", 2.0 / l)));
        }
        if layout.dim() != g.dim() {
            return Err(Error::DimensionMismatch { expected: g.dim(), got: layout.dim() });
        }
        Ok(FbsOp { g, reg, gamma, layout })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn smooth(&self) -> &G {
        &self.g
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    /// `T x` evaluated densely.
    pub fn apply_t(&self, x: &[f64]) -> Vec<f64> {
        let s = self.eval_s_full(x);
        x.iter().zip(&s).map(|(a, b)| a - b).collect()
    }

    /// `x̂_i - prox_{γ f_i}(x̂_i - γ∇_i g(x̂))` for block `i`, given the
    /// auxiliary cache of `x̂`.
    pub fn fbs_block<X: StateView + ?Sized>(&self, i: usize, xhat: &X, aux: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.layout.block_size(i)];
        self.eval_s_block(i, xhat, aux, &mut out);
        out
    }
}

impl FbsOp<LogisticLoss> {
    /// `λ‖x‖₁ + (1/N) Σ log(1 + exp(-b_r a_rᵀx))`; `gamma` defaults to `1.9/L`.
    pub fn logistic_l1(ds: &LabeledDataset, lambda: f64, gamma: Option<f64>, layout: BlockLayout) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("lambda must be nonnegative, got {lambda}")));
        }
        let g = LogisticLoss::new(ds);
        let gamma = gamma.unwrap_or(1.9 / g.lipschitz());
        Self::new(g, Regularizer::L1(lambda), gamma, layout)
    }
}

impl<G: SmoothPart> ProblemOperator for FbsOp<G> {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "fbs"
    }

    fn aux_len(&self) -> usize {
        self.g.aux_len()
    }

    fn init_aux(&self, x: &[f64], aux: &mut [f64]) {
        self.g.init_aux(x, aux)
    }

    fn aux_delta<F: FnMut(usize, f64)>(&self, i: usize, delta: &[f64], mut emit: F) {
        for (j, d) in self.layout.block(i).zip(delta) {
            self.g.aux_delta(j, *d, &mut emit);
        }
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        for (o, j) in out.iter_mut().zip(self.layout.block(i)) {
            let xj = x.get(j);
            let forward = xj - self.gamma * self.g.grad_coord(j, x, aux);
            *o = xj - self.reg.prox(forward, self.gamma);
        }
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.g.value(x) + self.reg.value(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CsrMatrix;
    use crate::operators::QuadraticLoss;

    #[test]
    fn dead_zone_gives_zero() {
        let ds = crate::data::gen_logistic(40, 10, 4, 8).unwrap();
        let g = LogisticLoss::new(&ds);
        let grad0 = g.gradient(&[0.0; 10]);
        let lambda = grad0.iter().map(|v| v.abs()).fold(0.0, f64::max) * 1.01;
        let op = FbsOp::logistic_l1(&ds, lambda, None, BlockLayout::scalar(10)).unwrap();
        assert!(op.eval_s_full(&[0.0; 10]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_sample_step() {
        let a = CsrMatrix::from_dense(1, 1, &[1.0]).unwrap();
        let ds = LabeledDataset::new(a, vec![1.0]).unwrap();
        let gamma = 2.0;
        let op = FbsOp::logistic_l1(&ds, 0.0, Some(gamma), BlockLayout::scalar(1)).unwrap();
        // oracle: central difference of g(x) = log(1 + e^{-x}) at 0
        let h: f64 = 1e-6;
        let fd = ((-h).exp().ln_1p() - h.exp().ln_1p()) / (2.0 * h);
        let s = op.fbs_block(0, &[0.0][..], &[0.0]);
        assert!((s[0] - gamma * fd).abs() < 1e-9);
        assert!((s[0] + 0.5 * gamma).abs() < 1e-15);
    }

    #[test]
    fn rejects_large_gamma() {
        let ds = crate::data::gen_logistic(20, 5, 3, 1).unwrap();
        let l = LogisticLoss::new(&ds).lipschitz();
        assert!(FbsOp::logistic_l1(&ds, 1e-3, Some(2.5 / l), BlockLayout::scalar(5)).is_err());
        assert!(FbsOp::logistic_l1(&ds, 1e-3, Some(1.0 / l), BlockLayout::scalar(5)).is_ok());
    }

    #[test]
    fn box_prox_clamps() {
        let g = QuadraticLoss::new(CsrMatrix::identity(2), vec![5.0, -5.0]).unwrap();
        let op = FbsOp::new(g, Regularizer::Box(-1.0, 1.0), 1.0, BlockLayout::scalar(2)).unwrap();
        // T x = clamp(x - (x - q)) = clamp(q)
        assert_eq!(op.apply_t(&[0.3, 0.2]), vec![1.0, -1.0]);
    }
}
