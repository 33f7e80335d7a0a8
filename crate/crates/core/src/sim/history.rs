use std::borrow::Cow;
use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::BlockLayout;

/// How the set `J(k)` of interim updates is generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayPolicy {
    /// `J(k) = ∅`: every read is current.
    None,
    /// `J(k) = {k - τ}`: the update `τ` steps back is missed.
    Fixed { tau: usize },
    /// Each `d ∈ {k-τ, …, k-1}` is in `J(k)` independently with probability ½.
    UniformRandom { tau: usize },
    /// `J(k) = {k-τ, …, k-1}`: the read is `x^{k-τ}`.
    Adversarial { tau: usize },
    /// Block `b` is read as it was `schedule[b mod len]` steps ago.
    PerCoordinate { schedule: Vec<usize> },
}

impl DelayPolicy {
    pub fn tau(&self) -> usize {
        match self {
            DelayPolicy::None => 0,
            DelayPolicy::Fixed { tau } | DelayPolicy::UniformRandom { tau } | DelayPolicy::Adversarial { tau } => *tau,
            DelayPolicy::PerCoordinate { schedule } => schedule.iter().copied().max().unwrap_or(0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DelayPolicy::PerCoordinate { schedule } = self {
            if schedule.is_empty() {
                return Err(Error::invalid("per-coordinate delay schedule is empty"));
            }
        }
        Ok(())
    }

    /// The read plan for step `k`. Only `UniformRandom` consumes randomness.
    pub fn plan<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> ReadPlan {
        let lo = |tau: usize| k.saturating_sub(tau);
        match self {
            DelayPolicy::None => ReadPlan::Set(Vec::new()),
            DelayPolicy::Fixed { tau } => {
                if *tau > 0 && k >= *tau {
                    ReadPlan::Set(vec![k - tau])
                } else {
                    ReadPlan::Set(Vec::new())
                }
            }
            DelayPolicy::UniformRandom { tau } => {
                let mut j = Vec::new();
                for d in k.saturating_sub(*tau)..k {
                    if rng.random::<bool>() {
                        j.push(d);
                    }
                }
                ReadPlan::Set(j)
            }
            DelayPolicy::Adversarial { tau } => ReadPlan::Set((lo(*tau)..k).collect()),
            DelayPolicy::PerCoordinate { schedule } => ReadPlan::PerBlock(schedule.clone()),
        }
    }
}

/// Whether the reader may see a mix of old and new blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadMode {
    #[default]
    Inconsistent,
    /// The read is always a past global state `x^{k-d}`.
    Consistent,
}

/// Which interim updates a read misses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadPlan {
    /// Step indices `J(k)`.
    Set(Vec<usize>),
    /// Per-block delays, cycled over blocks.
    PerBlock(Vec<usize>),
}

/// The transition `x^k → x^{k+1}`, which touches one block.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub block: usize,
    pub old: Vec<f64>,
    pub new: Vec<f64>,
}

impl StepRecord {
    pub fn delta(&self) -> Vec<f64> {
        self.new.iter().zip(&self.old).map(|(n, o)| n - o).collect()
    }

    pub fn step_sq(&self) -> f64 {
        self.new.iter().zip(&self.old).map(|(n, o)| (n - o) * (n - o)).sum()
    }
}

/// The current iterate plus the last `τ` transitions.
///
/// Steps before the start count as zero changes, so the window is padded
/// with copies of `x⁰`.
#[derive(Debug, Clone)]
pub struct IterateHistory {
    tau: usize,
    layout: BlockLayout,
    x: Vec<f64>,
    k: usize,
    records: VecDeque<StepRecord>,
}

impl IterateHistory {
    pub fn new(x0: Vec<f64>, layout: BlockLayout, tau: usize) -> Result<Self> {
        if x0.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: x0.len() });
        }
        Ok(IterateHistory { tau, layout, x: x0, k: 0, records: VecDeque::with_capacity(tau + 1) })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Number of steps applied so far.
    pub fn step(&self) -> usize {
        self.k
    }

    pub fn current(&self) -> &[f64] {
        &self.x
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Stored transitions, oldest first.
    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter()
    }

    /// `x_b ← x_b + delta`; returns nothing, records the transition.
    pub fn commit(&mut self, block: usize, delta: &[f64]) -> Result<()> {
        self.layout.check_block(block)?;
        let range = self.layout.block(block);
        if delta.len() != range.len() {
            return Err(Error::DimensionMismatch { expected: range.len(), got: delta.len() });
        }
        let old = self.x[range.clone()].to_vec();
        for (xj, d) in self.x[range.clone()].iter_mut().zip(delta) {
            *xj += d;
        }
        let new = self.x[range].to_vec();
        if self.tau > 0 {
            if self.records.len() == self.tau {
                self.records.pop_front();
            }
            self.records.push_back(StepRecord { k: self.k, block, old, new });
        }
        self.k += 1;
        Ok(())
    }

    /// `‖x^i - x^{i+1}‖²` for `i = k-τ, …, k-1`, oldest first, zero before the start.
    pub fn diffs_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.tau];
        let offset = self.tau - self.records.len();
        for (slot, r) in out[offset..].iter_mut().zip(&self.records) {
            *slot = r.step_sq();
        }
        out
    }

    fn check_set(&self, j: &[usize]) -> Result<()> {
        let lo = self.k.saturating_sub(self.tau);
        for &d in j {
            if d < lo || d >= self.k {
                return Err(Error::DelayOutOfWindow { step: d, lo, hi: self.k });
            }
        }
        Ok(())
    }

    /// `x̂ᵏ = xᵏ + Σ_{d∈J}(x^d - x^{d+1})`.
    ///
    /// Per block, the newest run of missed updates is undone by restoring the
    /// stored old value, so a suffix `J` reproduces `x^{min J}` bit for bit;
    /// missed updates behind a seen one are subtracted.
    pub fn reconstruct_xhat(&self, j: &[usize]) -> Result<Vec<f64>> {
        self.check_set(j)?;
        let mut xhat = self.x.clone();
        self.rewind(&mut xhat, |r| j.contains(&r.k));
        Ok(xhat)
    }

    /// Reads according to a plan and mode; borrows the current iterate when
    /// nothing is missed. Also returns the plan's effective oldest step.
    pub fn read(&self, plan: &ReadPlan, mode: ReadMode) -> Result<(Cow<'_, [f64]>, usize)> {
        match plan {
            ReadPlan::Set(j) => {
                self.check_set(j)?;
                let Some(&oldest) = j.iter().min() else {
                    return Ok((Cow::Borrowed(&self.x), self.k));
                };
                let mut xhat = self.x.clone();
                match mode {
                    ReadMode::Inconsistent => self.rewind(&mut xhat, |r| j.contains(&r.k)),
                    ReadMode::Consistent => self.rewind(&mut xhat, |r| r.k >= oldest),
                }
                Ok((Cow::Owned(xhat), oldest))
            }
            ReadPlan::PerBlock(schedule) => {
                let delay = |b: usize| schedule[b % schedule.len()].min(self.tau);
                let max_d = (0..self.layout.num_blocks()).map(delay).max().unwrap_or(0);
                let oldest = self.k.saturating_sub(max_d);
                if oldest == self.k {
                    return Ok((Cow::Borrowed(&self.x), self.k));
                }
                let mut xhat = self.x.clone();
                match mode {
                    ReadMode::Inconsistent => self.rewind(&mut xhat, |r| r.k + delay(r.block) >= self.k),
                    ReadMode::Consistent => self.rewind(&mut xhat, |r| r.k >= oldest),
                }
                Ok((Cow::Owned(xhat), oldest))
            }
        }
    }

    fn rewind<F: Fn(&StepRecord) -> bool>(&self, xhat: &mut [f64], missed: F) {
        // blocks whose newest updates have all been missed so far
        let mut seen_gap: HashMap<usize, bool> = HashMap::new();
        for r in self.records.iter().rev() {
            let range = self.layout.block(r.block);
            let gap = seen_gap.entry(r.block).or_insert(false);
            if missed(r) {
                if *gap {
                    for ((v, n), o) in xhat[range].iter_mut().zip(&r.new).zip(&r.old) {
                        *v -= n - o;
                    }
                } else {
                    xhat[range].copy_from_slice(&r.old);
                }
            } else {
                *gap = true;
            }
        }
    }

    /// Blocks that differ between the current iterate and some read.
    pub fn touched_blocks(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.records.iter().map(|r| r.block).collect();
        b.sort_unstable();
        b.dedup();
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_coord() -> IterateHistory {
        let mut h = IterateHistory::new(vec![0.0; 4], BlockLayout::scalar(4), 2).unwrap();
        h.commit(0, &[1.0]).unwrap();
        h.commit(3, &[2.0]).unwrap();
        h
    }

    #[test]
    fn four_coordinate_read() {
        let h = four_coord();
        assert_eq!(h.reconstruct_xhat(&[]).unwrap(), vec![1.0, 0.0, 0.0, 2.0]);
        assert_eq!(h.reconstruct_xhat(&[0]).unwrap(), vec![0.0, 0.0, 0.0, 2.0]);
        assert_eq!(h.reconstruct_xhat(&[0, 1]).unwrap(), vec![0.0; 4]);
        let (r, _) = h.read(&ReadPlan::Set(vec![0]), ReadMode::Consistent).unwrap();
        assert_eq!(&*r, &[0.0; 4]);
    }

    #[test]
    fn window_is_enforced() {
        let mut h = four_coord();
        h.commit(1, &[1.0]).unwrap();
        assert!(matches!(h.reconstruct_xhat(&[0]), Err(Error::DelayOutOfWindow { step: 0, lo: 1, hi: 3 })));
        assert!(h.reconstruct_xhat(&[3]).is_err());
        assert!(h.reconstruct_xhat(&[1, 2]).is_ok());
    }

    #[test]
    fn diffs_are_padded() {
        let mut h = IterateHistory::new(vec![0.0; 2], BlockLayout::scalar(2), 3).unwrap();
        h.commit(1, &[2.0]).unwrap();
        assert_eq!(h.diffs_sq(), vec![0.0, 0.0, 4.0]);
    }

    #[test]
    fn policies_stay_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..20 {
            for p in [
                DelayPolicy::None,
                DelayPolicy::Fixed { tau: 3 },
                DelayPolicy::UniformRandom { tau: 3 },
                DelayPolicy::Adversarial { tau: 3 },
            ] {
                if let ReadPlan::Set(j) = p.plan(k, &mut rng) {
                    assert!(j.iter().all(|&d| d < k && d + 3 >= k));
                }
            }
        }
        assert_eq!(DelayPolicy::Fixed { tau: 2 }.plan(1, &mut rng), ReadPlan::Set(vec![]));
        assert_eq!(DelayPolicy::Adversarial { tau: 2 }.plan(5, &mut rng), ReadPlan::Set(vec![3, 4]));
    }

    proptest! {
        #[test]
        fn full_window_recovers_old_iterate(
            steps in proptest::collection::vec((0usize..3, -4.0f64..4.0), 1..30),
            tau in 1usize..6,
        ) {
            let mut h = IterateHistory::new(vec![0.5, -0.25, 1.0], BlockLayout::scalar(3), tau).unwrap();
            let mut past = vec![h.current().to_vec()];
            for (b, d) in steps {
                h.commit(b, &[d]).unwrap();
                past.push(h.current().to_vec());
            }
            let k = h.step();
            for lo in k.saturating_sub(tau)..=k {
                let j: Vec<usize> = (lo..k).collect();
                prop_assert_eq!(h.reconstruct_xhat(&j).unwrap(), past[lo].clone());
            }
        }

        #[test]
        fn arbitrary_set_matches_formula(
            steps in proptest::collection::vec((0usize..3, -4i32..4), 1..20),
            mask in 0u32..64,
        ) {
            // integer-valued deltas keep the arithmetic exact
            let tau = 5;
            let mut h = IterateHistory::new(vec![0.0; 3], BlockLayout::scalar(3), tau).unwrap();
            let mut past = vec![h.current().to_vec()];
            for (b, d) in steps {
                h.commit(b, &[d as f64]).unwrap();
                past.push(h.current().to_vec());
            }
            let k = h.step();
            let j: Vec<usize> = (k.saturating_sub(tau)..k).filter(|d| mask & (1 << (k - 1 - d)) != 0).collect();
            let mut want = past[k].clone();
            for &d in &j {
                for c in 0..3 {
                    want[c] += past[d][c] - past[d + 1][c];
                }
            }
            prop_assert_eq!(h.reconstruct_xhat(&j).unwrap(), want);
        }
    }
}
