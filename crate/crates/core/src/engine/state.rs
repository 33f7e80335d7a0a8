use std::ops::Range;
use std::sync::atomic::{fence, AtomicU64, AtomicU8, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::data::CsrMatrix;
use crate::error::{Error, Result};
use crate::fixpoint::{BlockLayout, ProblemOperator, StateView};

/// How a block is published to concurrent readers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockScheme {
    /// Every scalar is its own atomic word; blocks may be read half-updated.
    AtomicScalar,
    /// Two copies per block and an active selector; block reads are whole.
    DualCopy,
    /// A mutex per block around every read and write.
    PerBlockLock,
}

impl BlockScheme {
    /// Scalar blocks use single atomics, wider blocks use two copies.
    pub fn default_for(layout: &BlockLayout) -> Self {
        if layout.max_block_size() <= 1 {
            BlockScheme::AtomicScalar
        } else {
            BlockScheme::DualCopy
        }
    }
}

#[inline]
fn load(a: &AtomicU64) -> f64 {
    f64::from_bits(a.load(Ordering::Acquire))
}

/// `a += v` as one atomic read-modify-write.
#[inline]
pub fn atomic_add(a: &AtomicU64, v: f64) {
    let mut cur = a.load(Ordering::Relaxed);
    loop {
        let next = (f64::from_bits(cur) + v).to_bits();
        match a.compare_exchange_weak(cur, next, Ordering::AcqRel, Ordering::Relaxed) {
            Ok(_) => return,
            Err(seen) => cur = seen,
        }
    }
}

struct DualMeta {
    active: AtomicU8,
    /// Per-copy sequence counters; odd while that copy is being written.
    seq: [AtomicU64; 2],
    writer: Mutex<()>,
}

/// The iterate and auxiliary vector shared by all agents.
pub struct SharedState {
    layout: BlockLayout,
    scheme: BlockScheme,
    /// `dim` words, or `2·dim` for [`BlockScheme::DualCopy`] (copy `c` of
    /// coordinate `j` at `c·dim + j`).
    x: Vec<AtomicU64>,
    aux: Vec<AtomicU64>,
    dual: Vec<DualMeta>,
    locks: Vec<Mutex<()>>,
}

impl SharedState {
    pub fn new(x0: &[f64], aux0: &[f64], layout: BlockLayout, scheme: BlockScheme) -> Result<Self> {
        if x0.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), got: x0.len() });
        }
        let words = |v: &[f64]| v.iter().map(|f| AtomicU64::new(f.to_bits())).collect::<Vec<_>>();
        let m = layout.num_blocks();
        let (x, dual, locks) = match scheme {
            BlockScheme::AtomicScalar => (words(x0), Vec::new(), Vec::new()),
            BlockScheme::DualCopy => {
                let mut both = x0.to_vec();
                both.extend_from_slice(x0);
                let dual = (0..m)
                    .map(|_| DualMeta {
                        active: AtomicU8::new(0),
                        seq: [AtomicU64::new(0), AtomicU64::new(0)],
                        writer: Mutex::new(()),
                    })
                    .collect();
                (words(&both), dual, Vec::new())
            }
            BlockScheme::PerBlockLock => (words(x0), Vec::new(), (0..m).map(|_| Mutex::new(())).collect()),
        };
        Ok(SharedState { layout, scheme, x, aux: words(aux0), dual, locks })
    }

    /// State for `op` starting at `x0`, with its auxiliary vector.
    pub fn for_operator<O: ProblemOperator>(op: &O, x0: &[f64], scheme: BlockScheme) -> Result<Self> {
        let aux = op.compute_aux(x0);
        Self::new(x0, &aux, op.layout().clone(), scheme)
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn scheme(&self) -> BlockScheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn x_view(&self) -> XView<'_> {
        XView { s: self }
    }

    pub fn aux_view(&self) -> AuxView<'_> {
        AuxView { s: self }
    }

    fn get_x(&self, j: usize) -> f64 {
        match self.scheme {
            BlockScheme::AtomicScalar => load(&self.x[j]),
            BlockScheme::DualCopy => {
                let b = self.layout.block_of(j);
                let c = self.dual[b].active.load(Ordering::Acquire) as usize;
                load(&self.x[c * self.dim() + j])
            }
            BlockScheme::PerBlockLock => {
                let _g = self.locks[self.layout.block_of(j)].lock().unwrap_or_else(|e| e.into_inner());
                load(&self.x[j])
            }
        }
    }

    /// Reads a sub-range of one block; under the dual-copy scheme the values
    /// come from one completed version of the block.
    fn read_in_block(&self, b: usize, range: Range<usize>, out: &mut [f64]) {
        match self.scheme {
            BlockScheme::AtomicScalar => {
                for (o, j) in out.iter_mut().zip(range) {
                    *o = load(&self.x[j]);
                }
            }
            BlockScheme::DualCopy => {
                let meta = &self.dual[b];
                let dim = self.dim();
                loop {
                    let c = meta.active.load(Ordering::Acquire) as usize;
                    let s1 = meta.seq[c].load(Ordering::Acquire);
                    if s1 & 1 == 1 {
                        std::hint::spin_loop();
                        continue;
                    }
                    for (o, j) in out.iter_mut().zip(range.clone()) {
                        *o = f64::from_bits(self.x[c * dim + j].load(Ordering::Relaxed));
                    }
                    fence(Ordering::Acquire);
                    if meta.seq[c].load(Ordering::Relaxed) == s1 {
                        return;
                    }
                }
            }
            BlockScheme::PerBlockLock => {
                let _g = self.locks[b].lock().unwrap_or_else(|e| e.into_inner());
                for (o, j) in out.iter_mut().zip(range) {
                    *o = load(&self.x[j]);
                }
            }
        }
    }

    fn read_x_range(&self, range: Range<usize>, out: &mut [f64]) {
        let mut j = range.start;
        while j < range.end {
            let b = self.layout.block_of(j);
            let end = self.layout.block(b).end.min(range.end);
            self.read_in_block(b, j..end, &mut out[j - range.start..end - range.start]);
            j = end;
        }
    }

    /// A copy of the whole iterate, block by block.
    pub fn snapshot(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.read_x_range(0..self.dim(), &mut out);
        out
    }

    pub fn aux_snapshot(&self) -> Vec<f64> {
        self.aux.iter().map(load).collect()
    }

    /// `x_i += delta`, scalar by scalar atomically, or as one published
    /// version of the block.
    pub fn commit_block(&self, i: usize, delta: &[f64]) -> Result<()> {
        self.layout.check_block(i)?;
        let range = self.layout.block(i);
        if delta.len() != range.len() {
            return Err(Error::DimensionMismatch { expected: range.len(), got: delta.len() });
        }
        match self.scheme {
            BlockScheme::AtomicScalar => {
                for (j, d) in range.zip(delta) {
                    atomic_add(&self.x[j], *d);
                }
            }
            BlockScheme::DualCopy => {
                let meta = &self.dual[i];
                let _g = meta.writer.lock().unwrap_or_else(|e| e.into_inner());
                let dim = self.dim();
                let a = meta.active.load(Ordering::Relaxed) as usize;
                let b = 1 - a;
                meta.seq[b].fetch_add(1, Ordering::Relaxed);
                fence(Ordering::Release);
                for (j, d) in range.zip(delta) {
                    let cur = f64::from_bits(self.x[a * dim + j].load(Ordering::Relaxed));
                    self.x[b * dim + j].store((cur + d).to_bits(), Ordering::Relaxed);
                }
                meta.seq[b].fetch_add(1, Ordering::Release);
                meta.active.store(b as u8, Ordering::Release);
            }
            BlockScheme::PerBlockLock => {
                let _g = self.locks[i].lock().unwrap_or_else(|e| e.into_inner());
                for (j, d) in range.zip(delta) {
                    let cur = f64::from_bits(self.x[j].load(Ordering::Relaxed));
                    self.x[j].store((cur + d).to_bits(), Ordering::Release);
                }
            }
        }
        Ok(())
    }

    pub fn add_aux(&self, j: usize, v: f64) {
        atomic_add(&self.aux[j], v);
    }

    /// Adds `A[:, block]·delta` to the cache, given `Aᵀ` with one row per
    /// coordinate of `x`.
    pub fn maintain_cache_ax(&self, a_t: &CsrMatrix, block: usize, delta: &[f64]) -> Result<()> {
        if a_t.rows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a_t.rows() });
        }
        if a_t.cols() != self.aux.len() {
            return Err(Error::DimensionMismatch { expected: self.aux.len(), got: a_t.cols() });
        }
        self.layout.check_block(block)?;
        let range = self.layout.block(block);
        if delta.len() != range.len() {
            return Err(Error::DimensionMismatch { expected: range.len(), got: delta.len() });
        }
        for (j, d) in range.zip(delta) {
            if *d == 0.0 {
                continue;
            }
            let (cols, vals) = a_t.row(j);
            for (c, v) in cols.iter().zip(vals) {
                atomic_add(&self.aux[*c], v * d);
            }
        }
        Ok(())
    }
}

/// Applies one block update to the iterate and then to the auxiliary vector.
pub fn atomic_block_commit<O: ProblemOperator>(state: &SharedState, op: &O, i: usize, delta: &[f64]) -> Result<()> {
    state.commit_block(i, delta)?;
    op.aux_delta(i, delta, |j, v| state.add_aux(j, v));
    Ok(())
}

/// Lock-free read access to the iterate.
#[derive(Clone, Copy)]
pub struct XView<'a> {
    s: &'a SharedState,
}

impl StateView for XView<'_> {
    fn len(&self) -> usize {
        self.s.dim()
    }

    fn get(&self, j: usize) -> f64 {
        self.s.get_x(j)
    }

    fn read_range(&self, range: Range<usize>, out: &mut [f64]) {
        self.s.read_x_range(range, out)
    }
}

#[derive(Clone, Copy)]
pub struct AuxView<'a> {
    s: &'a SharedState,
}

impl StateView for AuxView<'_> {
    fn len(&self) -> usize {
        self.s.aux.len()
    }

    fn get(&self, j: usize) -> f64 {
        load(&self.s.aux[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commits_accumulate_under_each_scheme() {
        let layout = BlockLayout::from_sizes(&[2, 1]).unwrap();
        for scheme in [BlockScheme::AtomicScalar, BlockScheme::DualCopy, BlockScheme::PerBlockLock] {
            let s = SharedState::new(&[1.0, 2.0, 3.0], &[], layout.clone(), scheme).unwrap();
            s.commit_block(0, &[0.5, -1.0]).unwrap();
            s.commit_block(0, &[0.0, 0.0]).unwrap();
            s.commit_block(1, &[1.0]).unwrap();
            assert_eq!(s.snapshot(), vec![1.5, 1.0, 4.0]);
            assert_eq!(s.x_view().get(1), 1.0);
            assert!(s.commit_block(2, &[0.0]).is_err());
            assert!(s.commit_block(0, &[0.0]).is_err());
        }
    }

    #[test]
    fn default_scheme() {
        assert_eq!(BlockScheme::default_for(&BlockLayout::scalar(3)), BlockScheme::AtomicScalar);
        assert_eq!(BlockScheme::default_for(&BlockLayout::uniform(3, 2)), BlockScheme::DualCopy);
    }

    #[test]
    fn cache_update_matches_product() {
        let a = CsrMatrix::from_dense(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, -1.0]).unwrap();
        let x0 = [0.5, 1.0, -1.0];
        let s = SharedState::new(&x0, &a.mul(&x0), BlockLayout::scalar(3), BlockScheme::AtomicScalar).unwrap();
        let at = a.transpose();
        s.maintain_cache_ax(&at, 2, &[0.0]).unwrap();
        assert_eq!(s.aux_snapshot(), a.mul(&x0));
        s.commit_block(2, &[2.0]).unwrap();
        s.maintain_cache_ax(&at, 2, &[2.0]).unwrap();
        assert_eq!(s.aux_snapshot(), a.mul(&s.snapshot()));
        assert!(s.maintain_cache_ax(&a, 0, &[1.0]).is_err());
    }
}
