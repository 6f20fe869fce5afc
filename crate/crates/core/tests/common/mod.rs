//! Shared test oracles, independent of the library's computation paths:
//! a dense two-phase simplex, exhaustive vertex enumeration, transport
//! LPs over explicit couplings, and a quarter-integer grid search.

#![allow(dead_code)]

/// Dense two-phase simplex for
/// `min c'x  s.t.  A_eq x = b_eq, A_ub x <= b_ub, x >= 0`.
/// Bland's rule throughout, so it cannot cycle. Returns `(x, objective)`
/// or `None` when infeasible (unbounded problems are not handled; the
/// oracle callers only build bounded instances).
pub fn simplex_solve(
    c: &[f64],
    a_eq: &[Vec<f64>],
    b_eq: &[f64],
    a_ub: &[Vec<f64>],
    b_ub: &[f64],
) -> Option<(Vec<f64>, f64)> {
    const EPS: f64 = 1e-9;
    let n = c.len();
    let m_eq = a_eq.len();
    let m_ub = a_ub.len();
    let m = m_eq + m_ub;
    // Columns: n structural, m_ub slacks, m artificials.
    let cols = n + m_ub + m;

    let mut a = vec![vec![0.0; cols]; m];
    let mut b = vec![0.0; m];
    for (i, row) in a_eq.iter().enumerate() {
        a[i][..n].copy_from_slice(row);
        b[i] = b_eq[i];
    }
    for (i, row) in a_ub.iter().enumerate() {
        a[m_eq + i][..n].copy_from_slice(row);
        a[m_eq + i][n + i] = 1.0;
        b[m_eq + i] = b_ub[i];
    }
    // Nonnegative rhs so the artificial basis is feasible.
    for i in 0..m {
        if b[i] < 0.0 {
            b[i] = -b[i];
            for v in a[i].iter_mut() {
                *v = -*v;
            }
        }
        a[i][n + m_ub + i] = 1.0;
    }

    let mut basis: Vec<usize> = (0..m).map(|i| n + m_ub + i).collect();

    let pivot = |a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>, basis: &mut Vec<usize>, row: usize, col: usize| {
        let p = a[row][col];
        for v in a[row].iter_mut() {
            *v /= p;
        }
        b[row] /= p;
        for i in 0..a.len() {
            if i != row && a[i][col].abs() > 0.0 {
                let f = a[i][col];
                let src = a[row].clone();
                for (dst, s) in a[i].iter_mut().zip(&src) {
                    *dst -= f * s;
                }
                b[i] -= f * b[row];
            }
        }
        basis[row] = col;
    };

    // One simplex phase over the given objective row; returns false if an
    // unbounded direction shows up.
    let run = |a: &mut Vec<Vec<f64>>,
               b: &mut Vec<f64>,
               basis: &mut Vec<usize>,
               cost: &[f64],
               allowed: usize|
     -> bool {
        loop {
            // Reduced costs under Bland: pick the lowest-index improving column.
            let mut duals = vec![0.0; a.len()];
            for (i, &bi) in basis.iter().enumerate() {
                duals[i] = cost[bi];
            }
            let mut enter = None;
            for j in 0..allowed {
                if basis.contains(&j) {
                    continue;
                }
                let mut rc = cost[j];
                for i in 0..a.len() {
                    rc -= duals[i] * a[i][j];
                }
                if rc < -EPS {
                    enter = Some(j);
                    break;
                }
            }
            let Some(col) = enter else {
                return true;
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..a.len() {
                if a[i][col] > EPS {
                    let ratio = b[i] / a[i][col];
                    match leave {
                        Some((li, lr)) => {
                            if ratio < lr - EPS || (ratio < lr + EPS && basis[i] < basis[li]) {
                                leave = Some((i, ratio));
                            }
                        }
                        None => leave = Some((i, ratio)),
                    }
                }
            }
            let Some((row, _)) = leave else {
                return false;
            };
            pivot(a, b, basis, row, col);
        }
    };

    // Phase 1: drive the artificials to zero.
    let mut phase1 = vec![0.0; cols];
    for v in phase1.iter_mut().skip(n + m_ub) {
        *v = 1.0;
    }
    if !run(&mut a, &mut b, &mut basis, &phase1, cols) {
        return None;
    }
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &j)| j >= n + m_ub)
        .map(|(i, _)| b[i])
        .sum();
    if infeas > 1e-7 {
        return None;
    }
    // Pivot any zero-level artificials out when possible.
    for i in 0..m {
        if basis[i] >= n + m_ub {
            if let Some(col) = (0..n + m_ub).find(|&j| a[i][j].abs() > EPS) {
                pivot(&mut a, &mut b, &mut basis, i, col);
            }
        }
    }

    // Phase 2 over structural + slack columns only.
    let mut phase2 = vec![0.0; cols];
    phase2[..n].copy_from_slice(c);
    if !run(&mut a, &mut b, &mut basis, &phase2, n + m_ub) {
        return None;
    }

    let mut x = vec![0.0; n];
    for (i, &j) in basis.iter().enumerate() {
        if j < n {
            x[j] = b[i];
        }
    }
    let obj = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    Some((x, obj))
}

/// 1-Wasserstein distance as an explicit transport LP over couplings.
pub fn wasserstein_lp(h1: &[f64], h2: &[f64]) -> f64 {
    let n = h1.len();
    let var = |r: usize, s: usize| r * n + s;
    let mut cost = vec![0.0; n * n];
    for r in 0..n {
        for s in 0..n {
            cost[var(r, s)] = (r as f64 - s as f64).abs();
        }
    }
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    for r in 0..n {
        let mut row = vec![0.0; n * n];
        for s in 0..n {
            row[var(r, s)] = 1.0;
        }
        a_eq.push(row);
        b_eq.push(h1[r]);
    }
    // One column-marginal row is implied by the others; dropping it keeps
    // the system full rank.
    for s in 0..n - 1 {
        let mut row = vec![0.0; n * n];
        for r in 0..n {
            row[var(r, s)] = 1.0;
        }
        a_eq.push(row);
        b_eq.push(h2[s]);
    }
    simplex_solve(&cost, &a_eq, &b_eq, &[], &[])
        .expect("transport LP is feasible")
        .1
}

/// Worst-case expectation over the Wasserstein ball around `h_ref`:
/// optimizes `sum_s values[s] * h_s` over all `h` with `W(h, h_ref) <= rho`,
/// minimizing when `minimize` is set, through an explicit coupling LP.
pub fn ball_extremum_lp(values: &[f64], h_ref: &[f64], rho: f64, minimize: bool) -> f64 {
    let n = h_ref.len();
    let var = |r: usize, s: usize| r * n + s;
    let sign = if minimize { 1.0 } else { -1.0 };
    let mut cost = vec![0.0; n * n];
    for r in 0..n {
        for s in 0..n {
            cost[var(r, s)] = sign * values[s];
        }
    }
    let mut a_eq = Vec::new();
    let mut b_eq = Vec::new();
    for r in 0..n {
        let mut row = vec![0.0; n * n];
        for s in 0..n {
            row[var(r, s)] = 1.0;
        }
        a_eq.push(row);
        b_eq.push(h_ref[r]);
    }
    let mut move_cost = vec![0.0; n * n];
    for r in 0..n {
        for s in 0..n {
            move_cost[var(r, s)] = (r as f64 - s as f64).abs();
        }
    }
    let (_, obj) = simplex_solve(&cost, &a_eq, &b_eq, &[move_cost], &[rho])
        .expect("ball extremum LP is feasible");
    sign * obj
}

/// `max_{u in Phi*} g'u` over the 1-Lipschitz set
/// `u_r - u_s <= |r - s|`, solved as an explicit LP with the gauge
/// `u_0 = 0` and free variables split into positive parts.
pub fn lipschitz_dual_lp(g: &[f64]) -> f64 {
    let m = g.len() - 1; // variables u_1..u_m
    if m == 0 {
        return 0.0;
    }
    // x = (u_plus, u_minus), u_r = x[r-1] - x[m + r - 1].
    let nv = 2 * m;
    let mut cost = vec![0.0; nv];
    for r in 1..=m {
        cost[r - 1] = -g[r];
        cost[m + r - 1] = g[r];
    }
    let mut a_ub = Vec::new();
    let mut b_ub = Vec::new();
    let mut push_pair = |r: usize, s: usize| {
        // u_r - u_s <= |r - s| with u_0 fixed at zero.
        let mut row = vec![0.0; nv];
        if r > 0 {
            row[r - 1] += 1.0;
            row[m + r - 1] -= 1.0;
        }
        if s > 0 {
            row[s - 1] -= 1.0;
            row[m + s - 1] += 1.0;
        }
        a_ub.push(row);
        b_ub.push((r as f64 - s as f64).abs());
    };
    for r in 0..=m {
        for s in 0..=m {
            if r != s {
                push_pair(r, s);
            }
        }
    }
    let (_, obj) = simplex_solve(&cost, &[], &[], &a_ub, &b_ub).expect("Phi* LP is feasible");
    -obj
}

/// Exact minimum of `min c'x  s.t. Ax <= b, x >= 0` by enumerating every
/// basic point: all n-subsets of the rows of `[A; -I]`. Only sensible for
/// a handful of variables; the caller must make the problem bounded.
pub fn vertex_enumeration_min(c: &[f64], a_ub: &[Vec<f64>], b_ub: &[f64]) -> Option<f64> {
    let n = c.len();
    let m = a_ub.len();
    let total = m + n;
    let row = |i: usize, j: usize| -> f64 {
        if i < m {
            a_ub[i][j]
        } else if i - m == j {
            -1.0
        } else {
            0.0
        }
    };
    let rhs = |i: usize| -> f64 {
        if i < m {
            b_ub[i]
        } else {
            0.0
        }
    };

    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..n).collect();
    loop {
        // Solve the square system given by the active subset.
        let mut mat = vec![vec![0.0; n + 1]; n];
        for (k, &i) in subset.iter().enumerate() {
            for j in 0..n {
                mat[k][j] = row(i, j);
            }
            mat[k][n] = rhs(i);
        }
        if let Some(x) = solve_square(&mut mat) {
            let feasible = (0..total).all(|i| {
                let lhs: f64 = (0..n).map(|j| row(i, j) * x[j]).sum();
                lhs <= rhs(i) + 1e-7
            });
            if feasible {
                let obj: f64 = c.iter().zip(&x).map(|(c, x)| c * x).sum();
                best = Some(match best {
                    Some(b) => b.min(obj),
                    None => obj,
                });
            }
        }

        // Next combination in lexicographic order.
        let mut k = n;
        loop {
            if k == 0 {
                return best;
            }
            k -= 1;
            if subset[k] != k + total - n {
                subset[k] += 1;
                for j in k + 1..n {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Gaussian elimination with partial pivoting on an augmented system.
fn solve_square(mat: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = mat.len();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, mat[r][col].abs()))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())?;
        if pivot_val < 1e-9 {
            return None;
        }
        mat.swap(col, pivot_row);
        for r in 0..n {
            if r != col {
                let f = mat[r][col] / mat[col][col];
                if f != 0.0 {
                    let src = mat[col].clone();
                    for (dst, s) in mat[r].iter_mut().zip(&src) {
                        *dst -= f * s;
                    }
                }
            }
        }
    }
    Some((0..n).map(|i| mat[i][n] / mat[i][i]).collect())
}

/// Exhaustive search over quarter-integer recoding vectors within the
/// budget: the best `sum_r h_r E_r(t_r)` with every `t_r` a multiple of
/// 0.25, `t_r <= i_max(r)`, and `sum h_r t_r <= t_avg`. Ranks without
/// mass are pinned at zero.
pub fn quarter_grid_best(
    h: &recoding_core::distributions::RankDistribution,
    table: &recoding_core::rank_model::ExpectedRankTable,
    t_avg: f64,
) -> f64 {
    let support: Vec<usize> = h.support();
    let mut best = 0.0f64;
    let mut t = vec![0.0; h.max_rank() + 1];

    fn recurse(
        support: &[usize],
        idx: usize,
        budget_left: f64,
        h: &recoding_core::distributions::RankDistribution,
        table: &recoding_core::rank_model::ExpectedRankTable,
        t: &mut Vec<f64>,
        best: &mut f64,
    ) {
        if idx == support.len() {
            let mut value = 0.0;
            for &r in support {
                value += h.prob(r) * table.expected_rank(r, t[r]).unwrap();
            }
            if value > *best {
                *best = value;
            }
            return;
        }
        let r = support[idx];
        let p = h.prob(r);
        let cap = table.i_max(r) as f64;
        let max_steps = ((budget_left / p) / 0.25).floor().min(cap / 0.25) as usize;
        for steps in 0..=max_steps {
            let tr = steps as f64 * 0.25;
            t[r] = tr;
            recurse(support, idx + 1, budget_left - p * tr, h, table, t, best);
        }
        t[r] = 0.0;
    }

    recurse(&support, 0, t_avg, h, table, &mut t, &mut best);
    best
}
