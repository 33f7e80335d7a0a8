use super::smooth::SmoothPart;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};

/// Gradient descent as a fixed-point problem: `S = (2/L) ∇f`.
#[derive(Debug, Clone)]
pub struct GradOp<G> {
    g: G,
    layout: BlockLayout,
    l: f64,
}

impl<G: SmoothPart> GradOp<G> {
    pub fn new(g: G) -> Result<Self> {
        let l = g.lipschitz();
        let n = g.dim();
        Self::with_layout(g, BlockLayout::scalar(n), l)
    }

    /// Uses the given Lipschitz constant instead of the function's own.
    pub fn with_layout(g: G, layout: BlockLayout, l: f64) -> Result<Self> {
        if layout.dim() != g.dim() {
            return Err(Error::DimensionMismatch { expected: g.dim(), got: layout.dim() });
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::invalid(format!("Lipschitz constant must be positive, got {l}")));
        }
        Ok(GradOp { g, layout, l })
    }

    pub fn smooth(&self) -> &G {
        &self.g
    }

    pub fn lipschitz(&self) -> f64 {
        self.l
    }

    /// `(2/L) ∇_i f(x̂)`, rejecting non-finite gradients.
    pub fn grad_block<X: StateView + ?Sized>(&self, i: usize, xhat: &X, aux: &[f64]) -> Result<Vec<f64>> {
        self.layout.check_block(i)?;
        let mut out = vec![0.0; self.layout.block_size(i)];
        self.eval_s_block(i, xhat, aux, &mut out);
        if let Some(p) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "gradient", index: self.layout.block(i).start + p });
        }
        Ok(out)
    }
}

impl<G: SmoothPart> ProblemOperator for GradOp<G> {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "gradient"
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
        let scale = 2.0 / self.l;
        for (o, j) in out.iter_mut().zip(self.layout.block(i)) {
            *o = scale * self.g.grad_coord(j, x, aux);
        }
    }

    fn objective(&self, x: &[f64]) -> Option<f64> {
        Some(self.g.value(x))
    }
}
