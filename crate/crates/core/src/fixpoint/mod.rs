//! Operator abstraction and the serial / asynchronous update rules.

mod checks;
mod step;

pub use checks::{
    check_cocoercivity, check_cocoercivity_with, quasi_contraction_modulus, strong_monotonicity_from_lipschitz,
    CocoercivityReport,
};
pub use step::{
    default_rho, fejer_safe_step, linear_rate_steps, xi_from_parts, xi_metric, FejerMetricSpec, LinearRateSteps, StepKind,
    StepSizePolicy, DEFAULT_FEJER_C, ETA_MIN,
};

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Read access to a vector of scalars.
///
/// Operators only see the iterate through this trait, so the same block
/// evaluation runs on a plain slice, on a reconstructed stale read in the
/// simulator, or on the engine's atomic shared memory.
pub trait StateView {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, j: usize) -> f64;

    fn read_range(&self, range: Range<usize>, out: &mut [f64]) {
        for (o, j) in out.iter_mut().zip(range) {
            *o = self.get(j);
        }
    }
}

impl StateView for [f64] {
    fn len(&self) -> usize {
        <[f64]>::len(self)
    }

    #[inline]
    fn get(&self, j: usize) -> f64 {
        self[j]
    }

    fn read_range(&self, range: Range<usize>, out: &mut [f64]) {
        out.copy_from_slice(&self[range]);
    }
}

impl StateView for Vec<f64> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    #[inline]
    fn get(&self, j: usize) -> f64 {
        self[j]
    }

    fn read_range(&self, range: Range<usize>, out: &mut [f64]) {
        out.copy_from_slice(&self[range]);
    }
}

/// Partition of `[0, dim)` into contiguous coordinate blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::invalid("layout needs at least one block"));
        }
        if sizes.contains(&0) {
            return Err(Error::invalid("block sizes must be positive"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(BlockLayout { offsets })
    }

    /// One scalar per block.
    pub fn scalar(dim: usize) -> Self {
        BlockLayout { offsets: (0..=dim).collect() }
    }

    /// `blocks` blocks of `size` scalars each.
    pub fn uniform(blocks: usize, size: usize) -> Self {
        BlockLayout { offsets: (0..=blocks).map(|b| b * size).collect() }
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    #[inline]
    pub fn block(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block_size(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn max_block_size(&self) -> usize {
        self.offsets.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// Block containing scalar `j`.
    pub fn block_of(&self, j: usize) -> usize {
        match self.offsets.binary_search(&j) {
            Ok(pos) => pos,
            Err(pos) => pos - 1,
        }
    }

    pub fn check_block(&self, i: usize) -> Result<()> {
        if i < self.num_blocks() {
            Ok(())
        } else {
            Err(Error::BlockOutOfRange { index: i, blocks: self.num_blocks() })
        }
    }
}

/// A fixed-point problem `x = Tx`, exposed through `S = I - T`.
///
/// Operators whose block evaluation depends on an aggregate of the whole
/// iterate (the product `Ax`, a running mean) keep that aggregate in an
/// auxiliary vector. The auxiliary vector is a linear function of `x`; the
/// caller maintains it incrementally from [`ProblemOperator::aux_delta`].
pub trait ProblemOperator: Send + Sync {
    fn layout(&self) -> &BlockLayout;

    fn name(&self) -> &str;

    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn num_blocks(&self) -> usize {
        self.layout().num_blocks()
    }

    fn aux_len(&self) -> usize {
        0
    }

    /// Recomputes the auxiliary vector from scratch.
    fn init_aux(&self, _x: &[f64], _aux: &mut [f64]) {}

    /// Emits `(index, increment)` pairs to apply to the auxiliary vector when
    /// block `i` of `x` changes by `delta`.
    fn aux_delta<F: FnMut(usize, f64)>(&self, _i: usize, _delta: &[f64], _emit: F)
    where
        Self: Sized,
    {
    }

    /// `(S x)_i`, written to `out` (length = size of block `i`).
    fn eval_s_block<X, A>(&self, i: usize, x: &X, aux: &A, out: &mut [f64])
    where
        X: StateView + ?Sized,
        A: StateView + ?Sized,
        Self: Sized;

    /// Optional objective value for reporting.
    fn objective(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    fn compute_aux(&self, x: &[f64]) -> Vec<f64> {
        let mut aux = vec![0.0; self.aux_len()];
        self.init_aux(x, &mut aux);
        aux
    }

    fn eval_s_full(&self, x: &[f64]) -> Vec<f64>
    where
        Self: Sized,
    {
        let aux = self.compute_aux(x);
        let layout = self.layout();
        let mut out = vec![0.0; layout.dim()];
        for i in 0..layout.num_blocks() {
            self.eval_s_block(i, x, aux.as_slice(), &mut out[layout.block(i)]);
        }
        out
    }

    /// `‖x - Tx‖`.
    fn fixed_point_residual(&self, x: &[f64]) -> f64
    where
        Self: Sized,
    {
        crate::linalg::norm(&self.eval_s_full(x))
    }
}

/// Block-selection probabilities `p_1..p_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDistribution {
    probs: Vec<f64>,
    cumulative: Vec<f64>,
    uniform: bool,
}

impl SamplingDistribution {
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform distribution over zero blocks");
        let p = 1.0 / m as f64;
        let cumulative = (1..=m).map(|k| k as f64 / m as f64).collect();
        SamplingDistribution { probs: vec![p; m], cumulative, uniform: true }
    }

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::invalid(format!("probabilities must be positive, found {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}, expected 1")));
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(SamplingDistribution { probs, cumulative, uniform: false })
    }

    /// Normalises positive activation rates, so `P(i) = λ_i / Σλ`.
    pub fn from_rates(rates: &[f64]) -> Result<Self> {
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::invalid("activation rates must be positive"));
        }
        let total: f64 = rates.iter().sum();
        let mut probs: Vec<f64> = rates.iter().map(|r| r / total).collect();
        // absorb the rounding residue so the sum check holds
        let s: f64 = probs.iter().sum();
        let last = probs.len() - 1;
        probs[last] += 1.0 - s;
        Self::new(probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn p(&self, i: usize) -> f64 {
        self.probs[i]
    }

    pub fn p_min(&self) -> f64 {
        self.probs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// `m·p_i`, exactly 1 for the uniform distribution.
    #[inline]
    pub fn normalizer(&self, i: usize) -> f64 {
        if self.uniform {
            1.0
        } else {
            self.probs.len() as f64 * self.probs[i]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        if self.uniform {
            return ((u * self.probs.len() as f64) as usize).min(self.probs.len() - 1);
        }
        self.cumulative.partition_point(|c| *c <= u).min(self.probs.len() - 1)
    }
}

/// Effective scalar step `η / (m·p_i)` applied to block `i`.
#[inline]
pub fn block_step(eta: f64, dist: &SamplingDistribution, i: usize) -> f64 {
    eta / dist.normalizer(i)
}

/// Writes the increment `-(step · s)` for one block.
#[inline]
pub fn block_delta(s: &[f64], step: f64, out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(s) {
        *o = -(step * v);
    }
}

/// One Krasnosel'skii–Mann step `x - α S x`.
pub fn km_step<O: ProblemOperator>(x: &[f64], alpha: f64, op: &O) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("KM step size must lie in (0, 1), got {alpha}")));
    }
    km_step_unchecked(x, alpha, op)
}

/// [`km_step`] without the `α < 1` restriction (used for sync sweeps where
/// the relaxation parameter is a raw step size).
pub(crate) fn km_step_unchecked<O: ProblemOperator>(x: &[f64], alpha: f64, op: &O) -> Result<Vec<f64>> {
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: x.len() });
    }
    ensure_finite("km_step input", x)?;
    let s = op.eval_s_full(x);
    Ok(x.iter().zip(&s).map(|(xi, si)| xi - alpha * si).collect())
}

/// One asynchronous coordinate update: block `i` of `x` becomes
/// `x_i - η/(m p_i) · (S x̂)_i`; every other entry is copied unchanged.
pub fn coordinate_update<O: ProblemOperator>(
    x: &[f64],
    xhat: &[f64],
    i: usize,
    eta: f64,
    dist: &SamplingDistribution,
    op: &O,
) -> Result<Vec<f64>> {
    let layout = op.layout();
    layout.check_block(i)?;
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {eta}")));
    }
    if dist.len() != layout.num_blocks() {
        return Err(Error::DimensionMismatch { expected: layout.num_blocks(), got: dist.len() });
    }
    for v in [x, xhat] {
        if v.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: v.len() });
        }
    }
    let aux = op.compute_aux(xhat);
    let range = layout.block(i);
    let mut s = vec![0.0; range.len()];
    op.eval_s_block(i, xhat, aux.as_slice(), &mut s);
    let step = block_step(eta, dist, i);
    let mut out = x.to_vec();
    for (o, si) in out[range].iter_mut().zip(&s) {
        *o -= step * si;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `T x = scale · x` on scalar blocks.
    pub(crate) struct Scaling {
        pub layout: BlockLayout,
        pub scale: f64,
    }

    impl ProblemOperator for Scaling {
        fn layout(&self) -> &BlockLayout {
            &self.layout
        }
        fn name(&self) -> &str {
            "scaling"
        }
        fn eval_s_block<X, A>(&self, i: usize, x: &X, _aux: &A, out: &mut [f64])
        where
            X: StateView + ?Sized,
            A: StateView + ?Sized,
        {
            for (o, j) in out.iter_mut().zip(self.layout.block(i)) {
                *o = x.get(j) - self.scale * x.get(j);
            }
        }
    }

    #[test]
    fn km_identity_is_stationary() {
        let op = Scaling { layout: BlockLayout::scalar(3), scale: 1.0 };
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(km_step(&x, 0.5, &op).unwrap(), x);
    }

    #[test]
    fn km_half_contraction_unit_step() {
        let op = Scaling { layout: BlockLayout::scalar(2), scale: 0.5 };
        // α = 1 lies outside (0,1); use the unchecked path for the literal example
        let out = km_step_unchecked(&[1.0, 1.0], 1.0, &op).unwrap();
        assert_eq!(out, vec![0.5, 0.5]);
        assert!(km_step(&[1.0, 1.0], 1.0, &op).is_err());
    }

    #[test]
    fn km_rejects_non_finite() {
        let op = Scaling { layout: BlockLayout::scalar(2), scale: 0.5 };
        assert!(matches!(km_step(&[f64::NAN, 1.0], 0.5, &op), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn coordinate_update_uniform_and_nonuniform() {
        let op = Scaling { layout: BlockLayout::scalar(2), scale: 0.0 }; // S = I
        let x = vec![1.0, 1.0];
        let uni = SamplingDistribution::uniform(2);
        let half = SamplingDistribution::new(vec![0.5, 0.5]).unwrap();
        let a = coordinate_update(&x, &x, 0, 0.3, &uni, &op).unwrap();
        let b = coordinate_update(&x, &x, 0, 0.3, &half, &op).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, vec![0.7, 1.0]);

        let skew = SamplingDistribution::new(vec![0.25, 0.75]).unwrap();
        assert!((block_step(0.3, &skew, 0) - 0.6).abs() < 1e-15);
        let c = coordinate_update(&x, &x, 0, 0.3, &skew, &op).unwrap();
        assert!((c[0] - 0.4).abs() < 1e-15);
        assert_eq!(c[1].to_bits(), 1.0f64.to_bits());
        assert!(matches!(coordinate_update(&x, &x, 2, 0.3, &uni, &op), Err(Error::BlockOutOfRange { .. })));
    }

    #[test]
    fn sampling_matches_probabilities() {
        let d = SamplingDistribution::new(vec![0.1, 0.2, 0.7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(d.probs()) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn distribution_validation() {
        assert!(SamplingDistribution::new(vec![0.5, 0.4]).is_err());
        assert!(SamplingDistribution::new(vec![1.0, 0.0]).is_err());
        let r = SamplingDistribution::from_rates(&[1.0, 3.0]).unwrap();
        assert!((r.p(1) - 0.75).abs() < 1e-15);
        assert!((r.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn layout_lookup() {
        let l = BlockLayout::from_sizes(&[2, 3, 1]).unwrap();
        assert_eq!(l.dim(), 6);
        assert_eq!(l.block(1), 2..5);
        assert_eq!(l.block_of(0), 0);
        assert_eq!(l.block_of(4), 1);
        assert_eq!(l.block_of(5), 2);
    }
}
