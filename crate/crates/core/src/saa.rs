//! Sample-average baselines: the greedy marginal allocator and the
//! epigraph LP, both solving the nominal recoding problem on a fixed rank
//! distribution.
//!
//! The nominal problem maximizes `sum_r h_r E_r(t_r)` subject to the
//! average packet budget `sum_r h_r t_r = t_avg`. Because every `E_r` is
//! concave and separable, filling whole unit segments in order of
//! decreasing slope is optimal; the LP route solves the same problem
//! through the piecewise-linear epigraph and exists mostly as an
//! independent path (and as the degenerate case of the robust LP).

use crate::distributions::RankDistribution;
use crate::lp_solver::{self, LpProblem, SolverOptions, SparseBuilder, VarSign};
use crate::rank_model::ExpectedRankTable;
use crate::{Error, Result};
use std::io::{BufRead, Write};

/// Per-rank expected packet counts `t_0..t_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecodingVector {
    values: Vec<f64>,
}

impl RecodingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidPacketCount(v));
            }
        }
        Ok(Self { values })
    }

    pub fn zeros(max_rank: usize) -> Self {
        Self {
            values: vec![0.0; max_rank + 1],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, rank: usize) -> f64 {
        self.values[rank]
    }

    pub fn max_rank(&self) -> usize {
        self.values.len() - 1
    }

    /// Checks the per-rank domain caps `t_r <= i_max(r)` of a table.
    pub fn validate_against(&self, table: &ExpectedRankTable) -> Result<()> {
        if self.values.len() != table.batch_size() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "policy length {} vs batch size {}",
                self.values.len(),
                table.batch_size()
            )));
        }
        for (r, &v) in self.values.iter().enumerate() {
            let cap = table.i_max(r) as f64;
            if v > cap {
                return Err(Error::OutsidePiecewiseDomain {
                    rank: r,
                    value: v,
                    max: table.i_max(r),
                });
            }
        }
        Ok(())
    }

    /// Plain-text policy file: first line `M`, then `M+1` packet counts,
    /// one per line.
    pub fn write_policy<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.max_rank())?;
        for v in &self.values {
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    pub fn read_policy<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let m: usize = lines
            .next()
            .ok_or_else(|| Error::MalformedPolicy("empty file".into()))??
            .trim()
            .parse()
            .map_err(|e| Error::MalformedPolicy(format!("bad batch size line: {e}")))?;
        let mut values = Vec::with_capacity(m + 1);
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|e| Error::MalformedPolicy(format!("bad value {line:?}: {e}")))?;
            values.push(v);
        }
        if values.len() != m + 1 {
            return Err(Error::MalformedPolicy(format!(
                "expected {} values, found {}",
                m + 1,
                values.len()
            )));
        }
        Self::new(values)
    }
}

/// Average number of recoded packets allowed per batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    t_avg: f64,
}

impl Budget {
    pub fn new(t_avg: f64) -> Result<Self> {
        if !t_avg.is_finite() || t_avg <= 0.0 {
            return Err(Error::InvalidBudget(t_avg));
        }
        Ok(Self { t_avg })
    }

    pub fn t_avg(&self) -> f64 {
        self.t_avg
    }
}

/// Nominal objective `sum_r h_r E_r(t_r)` under the fractional-packet
/// semantics. Every `t_r` must lie inside the table domain.
pub fn objective(
    h: &RankDistribution,
    table: &ExpectedRankTable,
    t: &RecodingVector,
) -> Result<f64> {
    if h.max_rank() != table.batch_size() {
        return Err(Error::DimensionMismatch(format!(
            "distribution rank {} vs batch size {}",
            h.max_rank(),
            table.batch_size()
        )));
    }
    t.validate_against(table)?;
    let mut acc = 0.0;
    for r in 0..=h.max_rank() {
        let p = h.prob(r);
        if p > 0.0 {
            acc += p * table.expected_rank(r, t.get(r))?;
        }
    }
    Ok(acc)
}

/// A solved nominal instance.
#[derive(Debug, Clone)]
pub struct SaaSolution {
    pub policy: RecodingVector,
    /// Optimal nominal objective: the exact value of the greedy policy,
    /// or the LP optimum for the LP route (whose extracted policy may sit
    /// a solver tolerance away on a flat face).
    pub objective: f64,
    /// Set when the budget exceeded the total segment capacity and the
    /// policy saturated at the per-rank caps.
    pub saturated: bool,
}

/// Greedy marginal allocation: unit segments `(r, i)` are filled in order
/// of decreasing slope (ties by lower rank, then lower segment), each
/// costing `h_r` budget per unit; the final segment is taken fractionally
/// so that `sum_r h_r t_r` exhausts the budget exactly. Ranks outside the
/// support receive zero packets.
pub fn solve_saa_greedy(
    h: &RankDistribution,
    table: &ExpectedRankTable,
    budget: &Budget,
) -> Result<SaaSolution> {
    if h.max_rank() != table.batch_size() {
        return Err(Error::DimensionMismatch(format!(
            "distribution rank {} vs batch size {}",
            h.max_rank(),
            table.batch_size()
        )));
    }
    // Every rank exposes its segments strictly in order (t_r can only grow
    // through segment i after segments 0..i); a heap over the per-rank
    // frontier picks the globally best marginal slope, ties resolved by
    // lower rank. Ordering by the frontier keeps the within-rank order
    // correct even where rounding perturbs the theoretical slope monotony
    // by an ulp.
    struct Frontier {
        slope: f64,
        rank: usize,
    }
    impl PartialEq for Frontier {
        fn eq(&self, other: &Self) -> bool {
            self.slope == other.slope && self.rank == other.rank
        }
    }
    impl Eq for Frontier {}
    impl PartialOrd for Frontier {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Frontier {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.slope
                .total_cmp(&other.slope)
                .then(other.rank.cmp(&self.rank))
        }
    }

    let mut heap = std::collections::BinaryHeap::new();
    for r in 0..=h.max_rank() {
        if h.prob(r) > 0.0 && table.i_max(r) > 0 {
            heap.push(Frontier {
                slope: table.slope(r, 0),
                rank: r,
            });
        }
    }

    let mut t = vec![0.0; h.max_rank() + 1];
    let mut next_index = vec![0usize; h.max_rank() + 1];
    let mut remaining = budget.t_avg();
    while let Some(head) = heap.pop() {
        let r = head.rank;
        let i = next_index[r];
        let cost = h.prob(r);
        if remaining >= cost {
            t[r] = (i + 1) as f64;
            remaining -= cost;
            next_index[r] = i + 1;
            if i + 1 < table.i_max(r) {
                heap.push(Frontier {
                    slope: table.slope(r, i + 1),
                    rank: r,
                });
            }
        } else {
            t[r] = i as f64 + remaining / cost;
            remaining = 0.0;
            break;
        }
    }
    let saturated = remaining > 0.0;
    let policy = RecodingVector::new(t)?;
    let objective = objective(h, table, &policy)?;
    Ok(SaaSolution {
        policy,
        objective,
        saturated,
    })
}

/// Builds the epigraph LP of the nominal problem:
/// `max sum_r h_r v_r  s.t. v_r <= slope(r,i) t_r + intercept(r,i)` for
/// every stored segment, `sum_r h_r t_r <= t_avg`, `0 <= t_r <= i_max(r)`,
/// `v` free. The per-rank caps are the domain the piecewise form is exact
/// on; leaving them out lets near-saturated budgets chase flat-tail
/// slopes into enormous degenerate optimal faces.
pub fn build_saa_lp(
    h: &RankDistribution,
    table: &ExpectedRankTable,
    budget: &Budget,
) -> LpProblem {
    let m = table.batch_size();
    let n_vars = 2 * (m + 1);
    let mut builder = SparseBuilder::new(n_vars);
    let mut rhs = Vec::new();

    for r in 0..=m {
        if h.prob(r) > 0.0 {
            builder.push(r, h.prob(r));
        }
    }
    builder.finish_row();
    rhs.push(budget.t_avg());

    for r in 0..=m {
        for i in 0..=table.i_max(r) {
            builder.push(r, -table.slope(r, i));
            builder.push(m + 1 + r, 1.0);
            builder.finish_row();
            rhs.push(table.intercept(r, i));
        }
    }

    for r in 0..=m {
        builder.push(r, 1.0);
        builder.finish_row();
        rhs.push(table.i_max(r) as f64);
    }

    let mut cost = vec![0.0; n_vars];
    for r in 0..=m {
        cost[m + 1 + r] = -h.prob(r);
    }
    let mut signs = vec![VarSign::NonNegative; m + 1];
    signs.extend(std::iter::repeat(VarSign::Free).take(m + 1));

    LpProblem {
        cost,
        matrix: builder.build(),
        rhs,
        signs,
    }
}

/// Nominal solve through the LP route. The extracted policy is clamped to
/// the table domain (first-order solutions may overshoot by the solver
/// tolerance).
pub fn solve_saa_lp(
    h: &RankDistribution,
    table: &ExpectedRankTable,
    budget: &Budget,
    opts: &SolverOptions,
) -> Result<SaaSolution> {
    if h.max_rank() != table.batch_size() {
        return Err(Error::DimensionMismatch(format!(
            "distribution rank {} vs batch size {}",
            h.max_rank(),
            table.batch_size()
        )));
    }
    let lp = build_saa_lp(h, table, budget);
    // Epigraph multipliers are stationary when each rank's dual mass sums
    // to its probability; spreading it uniformly over the rank's segment
    // rows is a cheap feasible warm start.
    let mut warm = vec![0.0; lp.rows()];
    let mut row = 1;
    for r in 0..=table.batch_size() {
        let count = table.i_max(r) + 1;
        let share = h.prob(r) / count as f64;
        for slot in &mut warm[row..row + count] {
            *slot = share;
        }
        row += count;
    }
    let opts = SolverOptions {
        warm_dual: Some(warm),
        ..opts.clone()
    };
    let sol = lp_solver::solve_lp(&lp, &opts)?;
    let m = table.batch_size();
    let mut t = Vec::with_capacity(m + 1);
    for r in 0..=m {
        t.push(sol.x[r].clamp(0.0, table.i_max(r) as f64));
    }
    Ok(SaaSolution {
        policy: RecodingVector::new(t)?,
        objective: -sol.objective,
        saturated: false,
    })
}
