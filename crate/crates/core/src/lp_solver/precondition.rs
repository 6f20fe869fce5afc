//! Arithmetic-mean equilibration of the constraint matrix.
//!
//! Alternating passes divide every row by the arithmetic mean of the
//! absolute values of its nonzeros, then every column likewise. The
//! accumulated scalings form `D_L` and `D_R`; the scaled problem is
//! `min (D_R f)' y  s.t. (D_L A D_R) y <= D_L b`, and a solution maps back
//! as `x = D_R y`. A trailing row pass leaves every row with unit mean
//! absolute nonzero.

use super::sparse::SparseMatrix;
use super::LpProblem;
use crate::{Error, Result};

/// Diagonal scaling pair from equilibration, plus the global rhs/cost
/// normalizers that bring `||b||` and `||f||` to one.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// Row scalings (indexed by rows of the *output* problem).
    pub d_left: Vec<f64>,
    /// Column scalings.
    pub d_right: Vec<f64>,
    /// The scaled problem solves against `b / rhs_scale`; primal recovery
    /// multiplies back.
    pub rhs_scale: f64,
    /// The scaled problem minimizes `f / cost_scale`; dual recovery
    /// multiplies back.
    pub cost_scale: f64,
    /// Indices of all-zero rows of the input that were dropped (they have
    /// no mean to scale by); their rhs must be nonnegative, making the
    /// constraints vacuous.
    pub dropped_rows: Vec<usize>,
}

impl Preconditioner {
    /// Maps a scaled primal solution back to the original variables.
    pub fn recover_primal(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.d_right)
            .map(|(v, d)| v * d * self.rhs_scale)
            .collect()
    }

    /// Maps a scaled dual solution back to the original rows, reinserting
    /// zeros for dropped rows.
    pub fn recover_dual(&self, z: &[f64], original_rows: usize) -> Vec<f64> {
        let mut out = vec![0.0; original_rows];
        let mut zi = 0usize;
        let mut drop = self.dropped_rows.iter().peekable();
        for (r, slot) in out.iter_mut().enumerate() {
            if drop.peek() == Some(&&r) {
                drop.next();
                continue;
            }
            *slot = z[zi] * self.d_left[zi] * self.cost_scale;
            zi += 1;
        }
        out
    }
}

/// Equilibrates `p` with `passes` row/column rounds plus a final row pass.
pub fn precondition(p: &LpProblem, passes: usize) -> Result<(LpProblem, Preconditioner)> {
    let mut dropped_rows = Vec::new();
    for r in 0..p.matrix.rows() {
        if p.matrix.row_nnz(r) == 0 {
            if p.rhs[r] < 0.0 {
                return Err(Error::MalformedProblem(format!(
                    "empty row {r} with negative rhs {} is infeasible",
                    p.rhs[r]
                )));
            }
            dropped_rows.push(r);
        }
    }
    let (mut matrix, mut rhs) = if dropped_rows.is_empty() {
        (p.matrix.clone(), p.rhs.clone())
    } else {
        let matrix = p.matrix.drop_rows(&dropped_rows);
        let rhs = p
            .rhs
            .iter()
            .enumerate()
            .filter(|(r, _)| dropped_rows.binary_search(r).is_err())
            .map(|(_, &b)| b)
            .collect();
        (matrix, rhs)
    };

    let rows = matrix.rows();
    let cols = matrix.cols();
    let mut d_left = vec![1.0; rows];
    let mut d_right = vec![1.0; cols];

    let row_pass = |m: &mut SparseMatrix, d_left: &mut [f64], rhs: &mut [f64]| {
        for r in 0..m.rows() {
            let lo = m.row_ptr()[r];
            let hi = m.row_ptr()[r + 1];
            let mean = m.values()[lo..hi].iter().map(|v| v.abs()).sum::<f64>()
                / (hi - lo) as f64;
            let scale = 1.0 / mean;
            for v in &mut m.values_mut()[lo..hi] {
                *v *= scale;
            }
            d_left[r] *= scale;
            rhs[r] *= scale;
        }
    };

    for _ in 0..passes {
        row_pass(&mut matrix, &mut d_left, &mut rhs);

        let mut col_sum = vec![0.0f64; cols];
        let mut col_cnt = vec![0usize; cols];
        for (k, &c) in matrix.col_indices().iter().enumerate() {
            col_sum[c as usize] += matrix.values()[k].abs();
            col_cnt[c as usize] += 1;
        }
        let col_scale: Vec<f64> = col_sum
            .iter()
            .zip(&col_cnt)
            .map(|(&s, &n)| if n == 0 { 1.0 } else { n as f64 / s })
            .collect();
        let idx = matrix.col_indices().to_vec();
        for (k, &c) in idx.iter().enumerate() {
            matrix.values_mut()[k] *= col_scale[c as usize];
        }
        for (d, s) in d_right.iter_mut().zip(&col_scale) {
            *d *= s;
        }
    }
    row_pass(&mut matrix, &mut d_left, &mut rhs);

    let mut cost: Vec<f64> = p
        .cost
        .iter()
        .zip(&d_right)
        .map(|(f, d)| f * d)
        .collect();

    let rhs_scale = {
        let n = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            n
        } else {
            1.0
        }
    };
    let cost_scale = {
        let n = cost.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            n
        } else {
            1.0
        }
    };
    rhs.iter_mut().for_each(|v| *v /= rhs_scale);
    cost.iter_mut().for_each(|v| *v /= cost_scale);

    let scaled = LpProblem {
        cost,
        matrix,
        rhs,
        signs: p.signs.clone(),
    };
    Ok((
        scaled,
        Preconditioner {
            d_left,
            d_right,
            rhs_scale,
            cost_scale,
            dropped_rows,
        },
    ))
}

/// Second scaling stage applied by the solver pipeline (not part of the
/// arithmetic-mean equilibration contract): rows and columns are divided
/// by the square roots of their absolute sums, which bounds the operator
/// norm of the result by one regardless of how unevenly populated the
/// rows and columns are. Mean equilibration cannot see that imbalance: a
/// column of several hundred unit entries keeps mean one but dominates
/// the spectral norm and starves every other coordinate of step size.
pub(super) fn norm_rescale(p: &mut LpProblem, pc: &mut Preconditioner) {
    let rows = p.matrix.rows();
    let cols = p.matrix.cols();
    let mut row_sum = vec![0.0f64; rows];
    let mut col_sum = vec![0.0f64; cols];
    for r in 0..rows {
        for (c, v) in p.matrix.row(r) {
            row_sum[r] += v.abs();
            col_sum[c] += v.abs();
        }
    }
    let row_scale: Vec<f64> = row_sum
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 })
        .collect();
    let col_scale: Vec<f64> = col_sum
        .iter()
        .map(|&s| if s > 0.0 { 1.0 / s.sqrt() } else { 1.0 })
        .collect();

    for r in 0..rows {
        let lo = p.matrix.row_ptr()[r];
        let hi = p.matrix.row_ptr()[r + 1];
        let idx: Vec<u32> = p.matrix.col_indices()[lo..hi].to_vec();
        for (k, &c) in (lo..hi).zip(&idx) {
            p.matrix.values_mut()[k] *= row_scale[r] * col_scale[c as usize];
        }
        p.rhs[r] *= row_scale[r];
        pc.d_left[r] *= row_scale[r];
    }
    for c in 0..cols {
        p.cost[c] *= col_scale[c];
        pc.d_right[c] *= col_scale[c];
    }

    // Re-center the global rhs/cost normalizers.
    let nb = p.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb > 0.0 {
        p.rhs.iter_mut().for_each(|v| *v /= nb);
        pc.rhs_scale *= nb;
    }
    let nf = p.cost.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nf > 0.0 {
        p.cost.iter_mut().for_each(|v| *v /= nf);
        pc.cost_scale *= nf;
    }
}

/// Variance of the absolute values of the nonzero entries; used to check
/// that equilibration actually tightens the magnitude spread.
pub fn nonzero_magnitude_variance(m: &SparseMatrix) -> f64 {
    let n = m.nnz();
    if n == 0 {
        return 0.0;
    }
    let mean = m.values().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    m.values()
        .iter()
        .map(|v| (v.abs() - mean).powi(2))
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp_solver::VarSign;

    fn problem(rows: usize, cols: usize, entries: &[(usize, usize, f64)], rhs: Vec<f64>) -> LpProblem {
        LpProblem {
            cost: vec![1.0; cols],
            matrix: SparseMatrix::from_triplets(rows, cols, entries).unwrap(),
            rhs,
            signs: vec![VarSign::NonNegative; cols],
        }
    }

    #[test]
    fn identity_is_left_alone() {
        let p = problem(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)], vec![1.0, 1.0]);
        let (scaled, pc) = precondition(&p, 4).unwrap();
        assert_eq!(pc.d_left, vec![1.0, 1.0]);
        assert_eq!(pc.d_right, vec![1.0, 1.0]);
        assert_eq!(scaled.matrix.values(), p.matrix.values());
    }

    #[test]
    fn diagonal_magnitudes_are_absorbed() {
        let p = problem(2, 2, &[(0, 0, 10.0), (1, 1, 0.1)], vec![1.0, 1.0]);
        let (scaled, pc) = precondition(&p, 1).unwrap();
        for &v in scaled.matrix.values() {
            assert!((v.abs() - 1.0).abs() < 1e-12);
        }
        // One row pass alone fixes a diagonal matrix; D_L carries it all.
        assert!((pc.d_left[0] - 0.1).abs() < 1e-12);
        assert!((pc.d_left[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn final_row_means_are_unit() {
        let entries = [
            (0, 0, 3.0),
            (0, 1, -40.0),
            (1, 1, 0.02),
            (1, 2, 7.0),
            (2, 0, -900.0),
            (2, 2, 0.5),
        ];
        let p = problem(3, 3, &entries, vec![1.0, 2.0, 3.0]);
        let (scaled, _) = precondition(&p, 10).unwrap();
        for r in 0..3 {
            let vals: Vec<f64> = scaled.matrix.row(r).map(|(_, v)| v.abs()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((mean - 1.0).abs() < 1e-10, "row {r} mean {mean}");
        }
    }

    #[test]
    fn empty_rows_dropped_with_nonnegative_rhs() {
        let p = problem(3, 2, &[(0, 0, 2.0), (2, 1, 4.0)], vec![1.0, 0.5, 1.0]);
        let (scaled, pc) = precondition(&p, 2).unwrap();
        assert_eq!(pc.dropped_rows, vec![1]);
        assert_eq!(scaled.matrix.rows(), 2);
        assert_eq!(scaled.rhs.len(), 2);
        // Dual recovery reinserts the dropped row.
        let z = pc.recover_dual(&[1.0, 1.0], 3);
        assert_eq!(z.len(), 3);
        assert_eq!(z[1], 0.0);

        let bad = problem(2, 1, &[(0, 0, 1.0)], vec![1.0, -1.0]);
        assert!(precondition(&bad, 1).is_err());
    }

    #[test]
    fn scaling_is_consistent() {
        // Check A' = D_L A D_R entrywise, and that rhs/cost carry the
        // diagonal scalings divided by the global normalizers.
        let entries = [(0, 0, 5.0), (0, 1, 1.0), (1, 0, 0.2), (1, 1, 12.0)];
        let p = problem(2, 2, &entries, vec![3.0, 4.0]);
        let (scaled, pc) = precondition(&p, 6).unwrap();
        for r in 0..2 {
            for (c, v) in scaled.matrix.row(r) {
                let orig: f64 = p
                    .matrix
                    .row(r)
                    .find(|&(cc, _)| cc == c)
                    .map(|(_, v)| v)
                    .unwrap();
                assert!((v - pc.d_left[r] * orig * pc.d_right[c]).abs() < 1e-12);
            }
            assert!(
                (scaled.rhs[r] - pc.d_left[r] * p.rhs[r] / pc.rhs_scale).abs() < 1e-12
            );
        }
        for c in 0..2 {
            assert!(
                (scaled.cost[c] - pc.d_right[c] * p.cost[c] / pc.cost_scale).abs() < 1e-12
            );
        }
        // The normalizers leave the scaled data at unit norm.
        let nb = scaled.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nf = scaled.cost.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((nb - 1.0).abs() < 1e-12);
        assert!((nf - 1.0).abs() < 1e-12);
    }
}
