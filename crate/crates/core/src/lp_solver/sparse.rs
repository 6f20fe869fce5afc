//! Row-major sparse matrix, just large enough for the solver: forward and
//! transposed products in O(nnz) and a power-iteration norm estimate.

use crate::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

/// Incremental row-by-row construction.
pub struct SparseBuilder {
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseBuilder {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn with_capacity(cols: usize, rows_hint: usize, nnz_hint: usize) -> Self {
        let mut b = Self::new(cols);
        b.row_ptr.reserve(rows_hint);
        b.col_idx.reserve(nnz_hint);
        b.vals.reserve(nnz_hint);
        b
    }

    /// Appends an entry to the row under construction. Structural zeros
    /// are skipped.
    pub fn push(&mut self, col: usize, val: f64) {
        debug_assert!(col < self.cols);
        if val != 0.0 {
            self.col_idx.push(col as u32);
            self.vals.push(val);
        }
    }

    pub fn finish_row(&mut self) {
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn build(self) -> SparseMatrix {
        SparseMatrix {
            rows: self.row_ptr.len() - 1,
            cols: self.cols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            vals: self.vals,
        }
    }
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        entries: &[(usize, usize, f64)],
    ) -> Result<Self> {
        for &(r, c, v) in entries {
            if r >= rows || c >= cols {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::MalformedProblem(format!(
                    "non-finite entry at ({r}, {c})"
                )));
            }
        }
        let mut sorted: Vec<_> = entries.iter().filter(|e| e.2 != 0.0).copied().collect();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut builder = SparseBuilder::with_capacity(cols, rows + 1, sorted.len());
        let mut row = 0usize;
        for (r, c, v) in sorted {
            while row < r {
                builder.finish_row();
                row += 1;
            }
            builder.push(c, v);
        }
        while row < rows {
            builder.finish_row();
            row += 1;
        }
        Ok(builder.build())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_nnz(&self, row: usize) -> usize {
        self.row_ptr[row + 1] - self.row_ptr[row]
    }

    /// Entries of one row as `(column, value)` pairs.
    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.row_ptr[row];
        let hi = self.row_ptr[row + 1];
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.vals[lo..hi])
            .map(|(&c, &v)| (c as usize, v))
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub(crate) fn col_indices(&self) -> &[u32] {
        &self.col_idx
    }

    pub(crate) fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    /// `out = A x`.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for r in 0..self.rows {
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            let mut acc = 0.0;
            for k in lo..hi {
                acc += self.vals[k] * x[self.col_idx[k] as usize];
            }
            out[r] = acc;
        }
    }

    /// `out = A' z` by row-wise scatter; deterministic accumulation order.
    pub fn matvec_transpose(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.fill(0.0);
        for r in 0..self.rows {
            let zr = z[r];
            if zr == 0.0 {
                continue;
            }
            let lo = self.row_ptr[r];
            let hi = self.row_ptr[r + 1];
            for k in lo..hi {
                out[self.col_idx[k] as usize] += self.vals[k] * zr;
            }
        }
    }

    /// Removes the listed rows (and their rhs entries would be removed by
    /// the caller). Indices must be sorted ascending.
    pub(crate) fn drop_rows(&self, drop: &[usize]) -> SparseMatrix {
        let mut builder =
            SparseBuilder::with_capacity(self.cols, self.rows - drop.len() + 1, self.nnz());
        let mut d = 0usize;
        for r in 0..self.rows {
            if d < drop.len() && drop[d] == r {
                d += 1;
                continue;
            }
            for (c, v) in self.row(r) {
                builder.push(c, v);
            }
            builder.finish_row();
        }
        builder.build()
    }

    /// Submatrix of the listed rows, in the given (ascending) order.
    pub fn select_rows(&self, keep: &[usize]) -> SparseMatrix {
        let nnz: usize = keep.iter().map(|&r| self.row_nnz(r)).sum();
        let mut builder = SparseBuilder::with_capacity(self.cols, keep.len() + 1, nnz);
        for &r in keep {
            for (c, v) in self.row(r) {
                builder.push(c, v);
            }
            builder.finish_row();
        }
        builder.build()
    }
}

/// Estimate of the spectral norm `||A||_2` by power iteration on `A'A`,
/// run until the relative change drops below `1e-6` (at most 200 rounds).
pub fn spectral_norm_estimate(a: &SparseMatrix) -> f64 {
    if a.nnz() == 0 {
        return 0.0;
    }
    let n = a.cols();
    // Deterministic start with unequal components so the iteration is not
    // trapped orthogonal to the leading singular vector.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i % 7) as f64)).collect();
    let mut av = vec![0.0; a.rows()];
    let mut atav = vec![0.0; n];
    let mut estimate = 0.0f64;
    for _ in 0..200 {
        let norm_v = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_v == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm_v);
        a.matvec(&v, &mut av);
        let new_estimate = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        a.matvec_transpose(&av, &mut atav);
        std::mem::swap(&mut v, &mut atav);
        let done = (new_estimate - estimate).abs() <= 1e-6 * new_estimate.max(1e-300);
        estimate = new_estimate;
        if done {
            break;
        }
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> SparseMatrix {
        let entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        SparseMatrix::from_triplets(n, n, &entries).unwrap()
    }

    #[test]
    fn matvec_and_transpose() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -3.0)])
            .unwrap();
        let mut out = vec![0.0; 2];
        a.matvec(&[1.0, 2.0, 3.0], &mut out);
        assert_eq!(out, vec![7.0, -6.0]);
        let mut out_t = vec![0.0; 3];
        a.matvec_transpose(&[1.0, 1.0], &mut out_t);
        assert_eq!(out_t, vec![1.0, -3.0, 2.0]);
    }

    #[test]
    fn builder_skips_zeros_and_keeps_empty_rows() {
        let mut b = SparseBuilder::new(2);
        b.push(0, 0.0);
        b.finish_row();
        b.push(1, 5.0);
        b.finish_row();
        let a = b.build();
        assert_eq!(a.rows(), 2);
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.row_nnz(0), 0);
    }

    #[test]
    fn drop_rows_removes_selected() {
        let a = SparseMatrix::from_triplets(
            3,
            2,
            &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, 3.0), (2, 1, 4.0)],
        )
        .unwrap();
        let b = a.drop_rows(&[1]);
        assert_eq!(b.rows(), 2);
        let row1: Vec<_> = b.row(1).collect();
        assert_eq!(row1, vec![(0, 3.0), (1, 4.0)]);
    }

    #[test]
    fn spectral_norm_identity_and_rank_one() {
        assert!((spectral_norm_estimate(&identity(5)) - 1.0).abs() < 1e-6);
        // u v' with u = (3, 4), v = (1, 2, 2): norm = 5 * 3 = 15.
        let u = [3.0, 4.0];
        let v = [1.0, 2.0, 2.0];
        let mut entries = Vec::new();
        for (i, &ui) in u.iter().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                entries.push((i, j, ui * vj));
            }
        }
        let a = SparseMatrix::from_triplets(2, 3, &entries).unwrap();
        assert!((spectral_norm_estimate(&a) - 15.0).abs() < 1e-4);
    }

    #[test]
    fn spectral_norm_matches_svd_oracle() {
        // Deterministic pseudo-random dense 20x30 matrix.
        let rows = 20;
        let cols = 30;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let mut entries = Vec::new();
        let mut dense = nalgebra::DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = next();
                dense[(r, c)] = v;
                entries.push((r, c, v));
            }
        }
        let a = SparseMatrix::from_triplets(rows, cols, &entries).unwrap();
        let exact = dense.svd(false, false).singular_values[0];
        let est = spectral_norm_estimate(&a);
        assert!(
            (est - exact).abs() / exact < 1e-3,
            "estimate {est} vs exact {exact}"
        );
    }
}
