use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds and validates: `row_ptr` monotone and of length `rows + 1`,
    /// column indices strictly increasing within each row and `< cols`.
    pub fn new(rows: usize, cols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let m = CsrMatrix { rows, cols, row_ptr, col_idx, values };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1 || self.row_ptr[0] != 0 {
            return Err(Error::invalid("row_ptr must have rows + 1 entries starting at 0"));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("row_ptr is not monotone"));
        }
        let nnz = self.row_ptr[self.rows];
        if self.col_idx.len() != nnz || self.values.len() != nnz {
            return Err(Error::invalid(format!(
                "nnz mismatch: row_ptr says {nnz}, have {} indices and {} values",
                self.col_idx.len(),
                self.values.len()
            )));
        }
        for r in 0..self.rows {
            let idx = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(format!("row {r}: column indices not strictly increasing")));
            }
            if let Some(&c) = idx.last() {
                if c >= self.cols {
                    return Err(Error::invalid(format!("row {r}: column {c} out of range ({} columns)", self.cols)));
                }
            }
        }
        if let Some(p) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "matrix values", index: p });
        }
        Ok(())
    }

    /// From `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t: Vec<(usize, usize, f64)> = triplets.to_vec();
        if let Some(&(r, c, _)) = t.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::invalid(format!("triplet ({r}, {c}) outside {rows}x{cols}")));
        }
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self::new(rows, cols, row_ptr, col_idx, values)
    }

    pub fn from_dense(rows: usize, cols: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: dense.len() });
        }
        let mut t = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = dense[r * cols + c];
                if v != 0.0 {
                    t.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, &t)
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.row_ptr[self.rows]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        (&self.col_idx[s..e], &self.values[s..e])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, val) = self.row(r);
        match idx.binary_search(&c) {
            Ok(p) => val[p],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            let (idx, val) = self.row(r);
            *o = idx.iter().zip(val).map(|(c, v)| v * x[*c]).sum();
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec(x, &mut out);
        out
    }

    pub fn mul_t_vec(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, yr) in y.iter().enumerate().take(self.rows) {
            let (idx, val) = self.row(r);
            for (c, v) in idx.iter().zip(val) {
                out[*c] += v * yr;
            }
        }
    }

    pub fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.mul_t_vec(y, &mut out);
        out
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut count = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            count[c + 1] += 1;
        }
        for c in 0..self.cols {
            count[c + 1] += count[c];
        }
        let row_ptr = count.clone();
        let mut next = count;
        let nnz = self.nnz();
        let mut col_idx = vec![0; nnz];
        let mut values = vec![0.0; nnz];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (c, v) in idx.iter().zip(val) {
                let p = next[*c];
                col_idx[p] = r;
                values[p] = *v;
                next[*c] += 1;
            }
        }
        CsrMatrix { rows: self.cols, cols: self.rows, row_ptr, col_idx, values }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (c, v) in idx.iter().zip(val) {
                d[r * self.cols + c] = *v;
            }
        }
        d
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|r| {
            let (idx, val) = self.row(r);
            idx.iter().zip(val).all(|(c, v)| (self.get(*c, r) - v).abs() <= tol)
        })
    }

    /// `‖A‖₂` by power iteration on `AᵀA`.
    pub fn spectral_norm(&self, tol: f64, max_iter: usize, seed: u64) -> crate::linalg::PowerEstimate {
        crate::linalg::spectral_norm(
            self.rows,
            self.cols,
            |v, o| self.mul_vec(v, o),
            |v, o| self.mul_t_vec(v, o),
            tol,
            max_iter,
            seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_structure() {
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![2, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(2, 3, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CsrMatrix::new(1, 2, vec![0, 1], vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, &[(1, 0, 1.0), (0, 1, 2.0), (1, 0, 0.5)]).unwrap();
        assert_eq!(m.to_dense(), vec![0.0, 2.0, 1.5, 0.0]);
        assert_eq!(m.nnz(), 2);
    }

    proptest! {
        #[test]
        fn transpose_and_products_agree_with_dense(
            rows in 1usize..6, cols in 1usize..6,
            vals in proptest::collection::vec(prop_oneof![Just(0.0), -2.0f64..2.0], 36),
            x in proptest::collection::vec(-1.0f64..1.0, 6),
        ) {
            let dense: Vec<f64> = vals[..rows * cols].to_vec();
            let m = CsrMatrix::from_dense(rows, cols, &dense).unwrap();
            prop_assert!(m.validate().is_ok());
            let t = m.transpose();
            prop_assert!(t.validate().is_ok());
            for r in 0..rows {
                for c in 0..cols {
                    prop_assert_eq!(t.get(c, r), dense[r * cols + c]);
                }
            }
            let y = m.mul(&x[..cols]);
            for r in 0..rows {
                let e: f64 = (0..cols).map(|c| dense[r * cols + c] * x[c]).sum();
                prop_assert!((y[r] - e).abs() < 1e-12);
            }
            let z = m.mul_t(&x[..rows]);
            let z2 = t.mul(&x[..rows]);
            for c in 0..cols {
                prop_assert!((z[c] - z2[c]).abs() < 1e-12);
            }
        }
    }
}
