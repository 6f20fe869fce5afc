//! Distributionally robust recoding: the worst case over Wasserstein balls
//! around the empirical rank distribution, reformulated as a sparse LP.
//!
//! The robust problem maximizes the worst-case utility
//! `inf {E_h[E_r(t_r)] : W(h, h_N) <= rho1}` subject to the worst-case
//! budget `sup {E_h[t_r] : W(h, h_N) <= rho2} <= t_avg`. Dualizing both
//! worst cases and substituting the piecewise-linear expected-rank
//! segments yields one LP in the variables `(t, lambda_1, lambda_2)`,
//! assembled here in the same block layout used by the solver:
//!
//! * one budget row over `lambda_2`,
//! * per sample `j`, one epigraph row per (rank, segment) pair,
//! * per sample `j`, one row per rank tying `t` into the budget dual.
//!
//! The module also carries exact one-dimensional evaluators for both
//! worst cases (the duals are piecewise-linear in the single multiplier,
//! so scanning candidate breakpoints is exact); they are deliberately
//! independent of the LP pipeline and serve as its verification oracle.

use crate::distributions::{RankDistribution, RankSamples};
use crate::lp_solver::{self, LpProblem, SolverOptions, SparseBuilder, VarSign};
use crate::rank_model::ExpectedRankTable;
use crate::saa::{Budget, RecodingVector};
use crate::{Error, Result};

/// One robust instance: samples, table, radii, budget, and the uniform
/// per-rank segment count of the block layout.
#[derive(Debug, Clone)]
pub struct DroInstance<'a> {
    samples: RankSamples,
    table: &'a ExpectedRankTable,
    rho1: f64,
    rho2: f64,
    budget: Budget,
    segments: usize,
}

impl<'a> DroInstance<'a> {
    /// `segments` is the uniform segment bound `I`; ranks with fewer
    /// segments are padded flat. It must dominate every `i_max(r)`.
    pub fn with_segments(
        samples: RankSamples,
        table: &'a ExpectedRankTable,
        rho1: f64,
        rho2: f64,
        budget: Budget,
        segments: usize,
    ) -> Result<Self> {
        if samples.max_rank() != table.batch_size() {
            return Err(Error::DimensionMismatch(format!(
                "sample rank bound {} vs batch size {}",
                samples.max_rank(),
                table.batch_size()
            )));
        }
        if !rho1.is_finite() || rho1 < 0.0 || !rho2.is_finite() || rho2 < 0.0 {
            return Err(Error::InvalidCalibration(format!(
                "radii ({rho1}, {rho2}) must be nonnegative"
            )));
        }
        if segments < table.max_segments() {
            return Err(Error::DimensionMismatch(format!(
                "uniform segment count {} below table maximum {}",
                segments,
                table.max_segments()
            )));
        }
        Ok(Self {
            samples,
            table,
            rho1,
            rho2,
            budget,
            segments,
        })
    }

    /// Instance with the tight uniform segment count `max_r i_max(r)`.
    pub fn new(
        samples: RankSamples,
        table: &'a ExpectedRankTable,
        rho1: f64,
        rho2: f64,
        budget: Budget,
    ) -> Result<Self> {
        let segments = table.max_segments();
        Self::with_segments(samples, table, rho1, rho2, budget, segments)
    }

    pub fn samples(&self) -> &RankSamples {
        &self.samples
    }

    pub fn table(&self) -> &ExpectedRankTable {
        self.table
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn budget(&self) -> Budget {
        self.budget
    }

    pub fn segments(&self) -> usize {
        self.segments
    }
}

/// Assembles the LP for a weighted sample list. The public entry point
/// [`build_dro_lp`] passes every raw sample with weight `1/N`; the solve
/// path collapses duplicate ranks first, which leaves the optimum
/// unchanged (duplicate samples share identical constraint blocks).
fn build_weighted_lp(
    table: &ExpectedRankTable,
    sample_ranks: &[usize],
    weights: &[f64],
    rho1: f64,
    rho2: f64,
    t_avg: f64,
    segments: usize,
    cap_rows: bool,
) -> LpProblem {
    let m = table.batch_size();
    let k = sample_ranks.len();
    let n_vars = (m + 1) + 2 * (k + 1);
    let col_lambda01 = m + 1;
    let col_lambda1 = m + 2; // + j
    let col_lambda02 = m + 2 + k;
    let col_lambda2 = m + 3 + k; // + j

    let rows = 1 + k * (m + 1) * (segments + 1) + k * (m + 1);
    let mut builder = SparseBuilder::with_capacity(n_vars, rows + 1, 3 * rows);
    let mut rhs = Vec::with_capacity(rows);

    // Budget row: rho2 * lambda_{0,2} + sum_j w_j lambda_{j,2} <= t_avg.
    builder.push(col_lambda02, rho2);
    for (j, &w) in weights.iter().enumerate() {
        builder.push(col_lambda2 + j, w);
    }
    builder.finish_row();
    rhs.push(t_avg);

    // Epigraph blocks: lambda_{j,1} - slope(r,i) t_r - |r - r_j| lambda_{0,1}
    // <= intercept(r,i), for every sample j, rank r, segment i.
    for (j, &rj) in sample_ranks.iter().enumerate() {
        for r in 0..=m {
            let dist = (r as f64 - rj as f64).abs();
            for i in 0..=segments {
                builder.push(r, -table.slope(r, i));
                builder.push(col_lambda01, -dist);
                builder.push(col_lambda1 + j, 1.0);
                builder.finish_row();
                rhs.push(table.intercept(r, i));
            }
        }
    }

    // Budget-dual blocks: t_r - |r - r_j| lambda_{0,2} - lambda_{j,2} <= 0.
    for (j, &rj) in sample_ranks.iter().enumerate() {
        for r in 0..=m {
            let dist = (r as f64 - rj as f64).abs();
            builder.push(r, 1.0);
            builder.push(col_lambda02, -dist);
            builder.push(col_lambda2 + j, -1.0);
            builder.finish_row();
            rhs.push(0.0);
        }
    }

    // The piecewise representation is exact on `t_r <= i_max(r)` and the
    // padded tail is flat, so capping loses no value; it removes the
    // degenerate optimal rays the solve path would otherwise wander.
    if cap_rows {
        for r in 0..=m {
            builder.push(r, 1.0);
            builder.finish_row();
            rhs.push(table.i_max(r) as f64);
        }
    }

    let mut cost = vec![0.0; n_vars];
    cost[col_lambda01] = rho1;
    for (j, &w) in weights.iter().enumerate() {
        cost[col_lambda1 + j] = -w;
    }

    let mut signs = vec![VarSign::NonNegative; m + 2];
    signs.extend(std::iter::repeat(VarSign::Free).take(k));
    signs.push(VarSign::NonNegative);
    signs.extend(std::iter::repeat(VarSign::Free).take(k));

    LpProblem {
        cost,
        matrix: builder.build(),
        rhs,
        signs,
    }
}

/// The robust LP in its raw per-sample block form: variables
/// `(t, lambda_1, lambda_2)` of dimension `M + 2N + 3`,
/// `1 + N(M+1)(I+1) + N(M+1)` inequality rows.
pub fn build_dro_lp(inst: &DroInstance) -> LpProblem {
    let n = inst.samples.len();
    let weights = vec![1.0 / n as f64; n];
    build_weighted_lp(
        inst.table,
        inst.samples.ranks(),
        &weights,
        inst.rho1,
        inst.rho2,
        inst.budget.t_avg(),
        inst.segments,
        false,
    )
}

/// Dual warm start for a weighted robust LP: each sample's weight spread
/// uniformly over its epigraph block, which satisfies the epigraph
/// multipliers' stationarity from the first iterate.
fn block_uniform_dual(weights: &[f64], ranks_per_block: usize, segments: usize) -> Vec<f64> {
    let block = ranks_per_block * (segments + 1);
    let mut z = vec![0.0; 1 + weights.len() * block + weights.len() * ranks_per_block];
    for (j, &w) in weights.iter().enumerate() {
        let base = 1 + j * block;
        let share = w / block as f64;
        for slot in &mut z[base..base + block] {
            *slot = share;
        }
    }
    z
}

/// Dual warm start matching the [`build_dro_lp`] row layout.
pub fn warm_start_dual(inst: &DroInstance) -> Vec<f64> {
    let n = inst.samples.len();
    let weights = vec![1.0 / n as f64; n];
    block_uniform_dual(
        &weights,
        inst.table.batch_size() + 1,
        inst.segments,
    )
}

/// A solved robust instance.
#[derive(Debug, Clone)]
pub struct DroSolution {
    pub policy: RecodingVector,
    /// Optimal worst-case utility (the LP objective, negated back to the
    /// maximization orientation).
    pub objective: f64,
    pub lambda01: f64,
    pub lambda02: f64,
    /// Per-sample epigraph multipliers, in sample order.
    pub lambda1: Vec<f64>,
    /// Per-sample budget multipliers, in sample order.
    pub lambda2: Vec<f64>,
    /// Largest domain-cap violation removed from the raw LP policy.
    pub clip_magnitude: f64,
    pub iterations: usize,
    /// Scaled (primal, dual, gap) residuals at termination.
    pub residuals: (f64, f64, f64),
}

/// Builds, preconditions, and solves the robust LP, then maps the scaled
/// solution back and extracts the policy.
///
/// Two reductions keep the solve fast without touching the optimum:
/// duplicate sample ranks are collapsed into weights (duplicate samples
/// share identical constraint blocks), and the LP is solved by row
/// generation seeded with the segments around the nominal greedy policy
/// (the robust optimum activates a handful of the epigraph rows).
pub fn solve_dro(inst: &DroInstance, opts: &SolverOptions) -> Result<DroSolution> {
    let m = inst.table.batch_size();
    let n = inst.samples.len();

    let mut counts = vec![0usize; m + 1];
    for &r in inst.samples.ranks() {
        counts[r] += 1;
    }
    let unique: Vec<usize> = (0..=m).filter(|&r| counts[r] > 0).collect();
    let weights: Vec<f64> = unique
        .iter()
        .map(|&r| counts[r] as f64 / n as f64)
        .collect();

    let lp = build_weighted_lp(
        inst.table,
        &unique,
        &weights,
        inst.rho1,
        inst.rho2,
        inst.budget.t_avg(),
        inst.segments,
        true,
    );

    // Initial working set: the budget row, every budget-dual row, and per
    // (sample, rank) the first/last segments plus those bracketing the
    // nominal greedy policy.
    let k = unique.len();
    let nominal = crate::saa::solve_saa_greedy(
        &inst.samples.empirical(),
        inst.table,
        &inst.budget,
    )?;
    let block = (m + 1) * (inst.segments + 1);
    let mut initial = vec![0usize];
    let mut warm = vec![0.0; lp.rows()];
    for j in 0..k {
        let mut block_rows = Vec::new();
        for r in 0..=m {
            let base = 1 + j * block + r * (inst.segments + 1);
            let t_r = nominal.policy.get(r);
            let lo = t_r.floor() as usize;
            let mut segs = vec![0, inst.segments, lo, (lo + 1).min(inst.segments)];
            segs.sort_unstable();
            segs.dedup();
            for i in segs {
                block_rows.push(base + i);
            }
        }
        // Spread the sample weight over its working epigraph rows so the
        // epigraph multipliers are stationary from the first iterate.
        let share = weights[j] / block_rows.len() as f64;
        for &row in &block_rows {
            warm[row] = share;
        }
        initial.extend(block_rows);
    }
    let a2_start = 1 + k * block;
    initial.extend(a2_start..a2_start + k * (m + 1) + (m + 1));

    let opts = SolverOptions {
        warm_dual: Some(warm),
        ..opts.clone()
    };
    let sol = lp_solver::solve_lp_row_generation(&lp, &opts, &initial, 50)?;

    let mut clip_magnitude = 0.0f64;
    let mut t = Vec::with_capacity(m + 1);
    for r in 0..=m {
        let cap = inst.table.i_max(r) as f64;
        let raw = sol.x[r];
        let clipped = raw.clamp(0.0, cap);
        clip_magnitude = clip_magnitude.max((raw - clipped).abs());
        t.push(clipped);
    }

    let k = unique.len();
    let col_lambda1 = m + 2;
    let col_lambda02 = m + 2 + k;
    let col_lambda2 = m + 3 + k;
    let mut slot = vec![0usize; m + 1];
    for (u, &r) in unique.iter().enumerate() {
        slot[r] = u;
    }
    let lambda1 = inst
        .samples
        .ranks()
        .iter()
        .map(|&r| sol.x[col_lambda1 + slot[r]])
        .collect();
    let lambda2 = inst
        .samples
        .ranks()
        .iter()
        .map(|&r| sol.x[col_lambda2 + slot[r]])
        .collect();

    Ok(DroSolution {
        policy: RecodingVector::new(t)?,
        objective: -sol.objective,
        lambda01: sol.x[m + 1],
        lambda02: sol.x[col_lambda02],
        lambda1,
        lambda2,
        clip_magnitude,
        iterations: sol.report.iterations,
        residuals: (
            sol.report.primal_residual,
            sol.report.dual_residual,
            sol.report.gap,
        ),
    })
}

/// Candidate multiplier values where a piecewise-linear dual can change
/// slope: zero, every pairwise line crossing, every pairwise value slope,
/// and a probe beyond the last breakpoint (covering the asymptote of the
/// zero-radius case).
fn dual_candidates(values: &[f64], sample_ranks: &[usize]) -> Vec<f64> {
    let m = values.len() - 1;
    let mut candidates = vec![0.0];
    for &rj in sample_ranks {
        for a in 0..=m {
            let da = (a as f64 - rj as f64).abs();
            for b in (a + 1)..=m {
                let db = (b as f64 - rj as f64).abs();
                if da != db {
                    let lam = (values[b] - values[a]) / (da - db);
                    if lam > 0.0 && lam.is_finite() {
                        candidates.push(lam);
                    }
                }
            }
        }
    }
    for a in 0..=m {
        for b in (a + 1)..=m {
            let lam = (values[a] - values[b]).abs() / (b - a) as f64;
            if lam > 0.0 {
                candidates.push(lam);
            }
        }
    }
    let top = candidates.iter().cloned().fold(0.0f64, f64::max);
    candidates.push(2.0 * top + 1.0);
    candidates
}

/// Exact worst-case utility `inf {E_h[E_r(t_r)] : W(h, h_N) <= rho1}`,
/// evaluated through its dual: the concave piecewise-linear function
/// `g(l) = -l rho1 + mean_j min_r (E_r(t_r) + l |r - r_j|)` maximized over
/// `l >= 0` by scanning candidate breakpoints. Exact, solver-free.
pub fn worst_case_utility(
    t: &RecodingVector,
    samples: &RankSamples,
    table: &ExpectedRankTable,
    rho1: f64,
) -> Result<f64> {
    t.validate_against(table)?;
    let m = table.batch_size();
    let values: Vec<f64> = (0..=m)
        .map(|r| table.expected_rank(r, t.get(r)))
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let eval = |lam: f64| -> f64 {
        let mut acc = 0.0;
        for &rj in samples.ranks() {
            let mut best = f64::INFINITY;
            for (r, &v) in values.iter().enumerate() {
                let c = v + lam * (r as f64 - rj as f64).abs();
                if c < best {
                    best = c;
                }
            }
            acc += best;
        }
        -lam * rho1 + acc / n
    };
    Ok(dual_candidates(&values, samples.ranks())
        .into_iter()
        .map(eval)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Exact worst-case expected packet count
/// `sup {E_h[t_r] : W(h, h_N) <= rho2}`, through the convex dual
/// `g(l) = l rho2 + mean_j max_r (t_r - l |r - r_j|)` minimized over
/// `l >= 0` by the same breakpoint scan.
pub fn worst_case_expectation(t: &RecodingVector, samples: &RankSamples, rho2: f64) -> f64 {
    let values = t.values();
    let n = samples.len() as f64;
    let eval = |lam: f64| -> f64 {
        let mut acc = 0.0;
        for &rj in samples.ranks() {
            let mut best = f64::NEG_INFINITY;
            for (r, &v) in values.iter().enumerate() {
                let c = v - lam * (r as f64 - rj as f64).abs();
                if c > best {
                    best = c;
                }
            }
            acc += best;
        }
        lam * rho2 + acc / n
    };
    dual_candidates(values, samples.ranks())
        .into_iter()
        .map(eval)
        .fold(f64::INFINITY, f64::min)
}

/// Lipschitz norm of a value table relative to a distribution: the largest
/// slope from a support point to any other point of `0..=M`.
pub fn lipschitz_norm(values: &[f64], h: &RankDistribution) -> Result<f64> {
    if values.len() != h.max_rank() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "value table length {} vs support size {}",
            values.len(),
            h.max_rank() + 1
        )));
    }
    let support = h.support();
    if support.is_empty() {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    let mut best = 0.0f64;
    for &r in &support {
        for (other, &v) in values.iter().enumerate() {
            if other != r {
                let slope = (v - values[r]).abs() / (other as f64 - r as f64).abs();
                best = best.max(slope);
            }
        }
    }
    Ok(best)
}
