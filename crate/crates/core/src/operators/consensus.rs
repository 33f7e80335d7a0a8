use super::QuadLocal;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};

/// ADMM for `min Σ f_i(x_i)  s.t.  x_i = y`, one dual block `z_i` per agent.
///
/// The auxiliary vector is `y = -(1/(γm)) Σ z_i`. For block `i`:
/// `w_g = ẑ_i + γŷ`, `x_i = argmin f_i - ⟨2w_g - ẑ_i, x⟩ + (γ/2)‖x‖²`,
/// `w_f = 2w_g - ẑ_i - γx_i`, and `(S ẑ)_i = w_g - w_f`.
#[derive(Debug, Clone)]
pub struct ConsensusAdmmOp {
    locals: Vec<QuadLocal>,
    gamma: f64,
    d: usize,
    layout: BlockLayout,
}

impl ConsensusAdmmOp {
    pub fn new(locals: Vec<QuadLocal>, gamma: f64) -> Result<Self> {
        let d = locals.first().map(|l| l.c.len()).ok_or_else(|| Error::invalid("need at least one agent"))?;
        if locals.iter().any(|l| l.c.len() != d) {
            return Err(Error::invalid("all local variables must share one dimension"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let layout = BlockLayout::uniform(locals.len(), d);
        Ok(ConsensusAdmmOp { locals, gamma, d, layout })
    }

    pub fn locals(&self) -> &[QuadLocal] {
        &self.locals
    }

    pub fn point_dim(&self) -> usize {
        self.d
    }

    fn local_solve(&self, i: usize, zi: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let w_g: Vec<f64> = zi.iter().zip(y).map(|(z, yk)| z + self.gamma * yk).collect();
        let v: Vec<f64> = w_g.iter().zip(zi).map(|(w, z)| 2.0 * w - z).collect();
        let mut x = vec![0.0; self.d];
        self.locals[i].ridge_argmin(&v, self.gamma, &mut x);
        let w_f: Vec<f64> = v.iter().zip(&x).map(|(vk, xk)| vk - self.gamma * xk).collect();
        (x, w_g, w_f)
    }

    /// Returns the increments `(Δz_i, Δy)` of one update with step `eta`.
    pub fn consensus_admm_step(&self, i: usize, zhat_i: &[f64], y: &[f64], eta: f64) -> (Vec<f64>, Vec<f64>) {
        let (_, w_g, w_f) = self.local_solve(i, zhat_i, y);
        let dz: Vec<f64> = w_f.iter().zip(&w_g).map(|(f, g)| eta * (f - g)).collect();
        let scale = self.gamma * self.locals.len() as f64;
        let dy = dz.iter().map(|d| -d / scale).collect();
        (dz, dy)
    }

    /// Local primal solutions `x_i` for the dual point `z`.
    pub fn primal(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let y = self.compute_aux(z);
        (0..self.locals.len()).map(|i| self.local_solve(i, &z[self.layout.block(i)], &y).0).collect()
    }

    /// Mean of the local solutions.
    pub fn consensus_point(&self, z: &[f64]) -> Vec<f64> {
        let xs = self.primal(z);
        let m = xs.len() as f64;
        (0..self.d).map(|k| xs.iter().map(|x| x[k]).sum::<f64>() / m).collect()
    }
}

impl ProblemOperator for ConsensusAdmmOp {
    fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    fn name(&self) -> &str {
        "consensus_admm"
    }

    fn aux_len(&self) -> usize {
        self.d
    }

    fn init_aux(&self, z: &[f64], aux: &mut [f64]) {
        aux.iter_mut().for_each(|a| *a = 0.0);
        for block in z.chunks(self.d) {
            for (a, v) in aux.iter_mut().zip(block) {
                *a += v;
            }
        }
        let scale = -1.0 / (self.gamma * self.locals.len() as f64);
        aux.iter_mut().for_each(|a| *a *= scale);
    }

    fn aux_delta<F: FnMut(usize, f64)>(&self, _i: usize, delta: &[f64], mut emit: F) {
        let scale = self.gamma * self.locals.len() as f64;
        for (k, d) in delta.iter().enumerate() {
            emit(k, -d / scale);
        }
    }

    fn eval_s_block<X, A>(&self, i: usize, x: &X, aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
    {
        let mut zi = vec![0.0; self.d];
        x.read_range(self.layout.block(i), &mut zi);
        let mut y = vec![0.0; self.d];
        aux.read_range(0..self.d, &mut y);
        let (_, w_g, w_f) = self.local_solve(i, &zi, &y);
        for ((o, g), f) in out.iter_mut().zip(&w_g).zip(&w_f) {
            *o = g - f;
        }
    }

    fn objective(&self, z: &[f64]) -> Option<f64> {
        let x = self.consensus_point(z);
        Some(self.locals.iter().map(|l| l.value(&x)).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn locals() -> Vec<QuadLocal> {
        vec![
            QuadLocal::new(1.0, vec![1.0, 0.0]).unwrap(),
            QuadLocal::new(2.0, vec![-1.0, 2.0]).unwrap(),
            QuadLocal::new(0.5, vec![3.0, 1.0]).unwrap(),
        ]
    }

    #[test]
    fn serial_iteration_reaches_centralized_minimizer() {
        let op = ConsensusAdmmOp::new(locals(), 1.0).unwrap();
        let mut z = vec![0.0; 6];
        for _ in 0..2000 {
            let s = op.eval_s_full(&z);
            z.iter_mut().zip(&s).for_each(|(a, b)| *a -= b);
        }
        let x = op.consensus_point(&z);
        let oracle = QuadLocal::centralized_minimizer(op.locals());
        for k in 0..2 {
            assert!((x[k] - oracle[k]).abs() < 1e-10);
        }
        let y = op.compute_aux(&z);
        assert!((y[0] - oracle[0]).abs() < 1e-10);
    }

    #[test]
    fn step_increments_keep_aggregate() {
        let op = ConsensusAdmmOp::new(locals(), 0.7).unwrap();
        let mut z = vec![0.3, -0.1, 0.2, 0.5, -0.4, 0.0];
        let mut y = op.compute_aux(&z);
        for &i in &[0, 2, 1, 1, 0] {
            let (dz, dy) = op.consensus_admm_step(i, &z[2 * i..2 * i + 2], &y, 0.6);
            for k in 0..2 {
                z[2 * i + k] += dz[k];
                y[k] += dy[k];
            }
        }
        let fresh = op.compute_aux(&z);
        for k in 0..2 {
            assert!((y[k] - fresh[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_agent_minimizes_local() {
        let op = ConsensusAdmmOp::new(vec![QuadLocal::new(3.0, vec![2.0]).unwrap()], 1.0).unwrap();
        let mut z = vec![0.0];
        for _ in 0..200 {
            let s = op.eval_s_full(&z);
            z[0] -= s[0];
        }
        assert!((op.consensus_point(&z)[0] - 2.0).abs() < 1e-12);
    }
}
