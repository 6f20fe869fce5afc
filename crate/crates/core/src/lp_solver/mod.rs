//! Sparse-LP infrastructure: problem container, arithmetic-mean
//! equilibration, and the adaptive PDHG solver.

mod pdhg;
mod precondition;
mod sparse;

pub use pdhg::{solve_pdhg, SolverOptions, SolverReport, StepSizes, TracePoint};
pub use precondition::{nonzero_magnitude_variance, precondition, Preconditioner};
pub use sparse::{spectral_norm_estimate, SparseBuilder, SparseMatrix};

use crate::{Error, Result};

/// Per-variable sign constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSign {
    NonNegative,
    Free,
}

/// Inequality-form linear program `min f'x  s.t. Ax <= b`, each variable
/// either nonnegative or free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub cost: Vec<f64>,
    pub matrix: SparseMatrix,
    pub rhs: Vec<f64>,
    pub signs: Vec<VarSign>,
}

impl LpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.cost.len() != self.matrix.cols() || self.signs.len() != self.matrix.cols() {
            return Err(Error::DimensionMismatch(format!(
                "cost/sign length {} vs {} columns",
                self.cost.len(),
                self.matrix.cols()
            )));
        }
        if self.rhs.len() != self.matrix.rows() {
            return Err(Error::DimensionMismatch(format!(
                "rhs length {} vs {} rows",
                self.rhs.len(),
                self.matrix.rows()
            )));
        }
        if !self.cost.iter().chain(self.rhs.iter()).all(|v| v.is_finite())
            || !self.matrix.values().iter().all(|v| v.is_finite())
        {
            return Err(Error::MalformedProblem("non-finite data".into()));
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// `f'x` for a candidate point.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(f, x)| f * x).sum()
    }

    /// Componentwise feasibility violation `max(Ax - b, 0)`, infinity norm.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.rows()];
        self.matrix.matvec(x, &mut ax);
        ax.iter()
            .zip(&self.rhs)
            .map(|(a, b)| (a - b).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Preconditioned solve with recovery to the original variables.
#[derive(Debug, Clone)]
pub struct LpSolution {
    /// Primal solution in the original (unscaled) variables.
    pub x: Vec<f64>,
    /// Dual solution in the original row space.
    pub dual: Vec<f64>,
    /// `f'x` in the original problem.
    pub objective: f64,
    /// Unscaled feasibility residual (same normalization as the scaled one).
    pub primal_residual_unscaled: f64,
    /// Unscaled dual residual.
    pub dual_residual_unscaled: f64,
    pub preconditioner: Preconditioner,
    /// Report of the scaled-space iteration.
    pub report: SolverReport,
}

/// Equilibrates, solves with PDHG, and maps the solution back. Errors on
/// non-convergence, carrying the final residual diagnostics.
pub fn solve_lp(p: &LpProblem, opts: &SolverOptions) -> Result<LpSolution> {
    p.validate()?;
    let (mut scaled, mut pc) = if opts.precondition_passes > 0 {
        precondition(p, opts.precondition_passes)?
    } else {
        (
            p.clone(),
            Preconditioner {
                d_left: vec![1.0; p.rows()],
                d_right: vec![1.0; p.cols()],
                rhs_scale: 1.0,
                cost_scale: 1.0,
                dropped_rows: Vec::new(),
            },
        )
    };
    precondition::norm_rescale(&mut scaled, &mut pc);
    // A caller-supplied warm dual lives in the original row space; map it
    // through the row scalings into the solver's space.
    let opts_scaled;
    let opts = if let Some(z0) = &opts.warm_dual {
        if z0.len() != p.rows() {
            return Err(Error::DimensionMismatch(format!(
                "warm dual length {} vs {} rows",
                z0.len(),
                p.rows()
            )));
        }
        let mut scaled_dual = Vec::with_capacity(scaled.rows());
        let mut drop = pc.dropped_rows.iter().peekable();
        for (r, &v) in z0.iter().enumerate() {
            if drop.peek() == Some(&&r) {
                drop.next();
                continue;
            }
            scaled_dual.push(v / (pc.d_left[scaled_dual.len()] * pc.cost_scale));
        }
        opts_scaled = SolverOptions {
            warm_dual: Some(scaled_dual),
            ..opts.clone()
        };
        &opts_scaled
    } else {
        opts
    };
    let report = solve_pdhg(&scaled, opts);
    if !report.converged {
        return Err(Error::SolverDidNotConverge {
            iterations: report.iterations,
            primal: report.primal_residual,
            dual: report.dual_residual,
            gap: report.gap,
        });
    }
    let x = pc.recover_primal(&report.primal);
    let dual = pc.recover_dual(&report.dual, p.rows());
    let objective = p.objective(&x);

    // Residuals of the recovered point measured against the original data.
    let norm_b = p.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_f = p.cost.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut ax = vec![0.0; p.rows()];
    p.matrix.matvec(&x, &mut ax);
    let infeas = ax
        .iter()
        .zip(&p.rhs)
        .map(|(a, b)| (a - b).max(0.0).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut atz = vec![0.0; p.cols()];
    p.matrix.matvec_transpose(&dual, &mut atz);
    let dual_viol = p
        .signs
        .iter()
        .enumerate()
        .map(|(j, sign)| {
            let v = p.cost[j] + atz[j];
            match sign {
                VarSign::Free => v * v,
                VarSign::NonNegative => v.min(0.0).powi(2),
            }
        })
        .sum::<f64>()
        .sqrt();

    Ok(LpSolution {
        x,
        dual,
        objective,
        primal_residual_unscaled: infeas / (1.0 + norm_b),
        dual_residual_unscaled: dual_viol / (1.0 + norm_f),
        preconditioner: pc,
        report,
    })
}

/// Solves a tall LP by row generation: only a working set of inequality
/// rows enters the PDHG solve, and rows violated by the reduced solution
/// are pulled in until the full constraint set holds. Dropping rows
/// relaxes the problem, so the first reduced solution that is feasible
/// for the full problem is optimal for it; the dual extends with zeros
/// on the never-activated rows.
///
/// Intended for problems whose optimal dual support is tiny compared to
/// the row count (the robust recoding LPs activate a few dozen of tens of
/// thousands of rows).
pub fn solve_lp_row_generation(
    p: &LpProblem,
    opts: &SolverOptions,
    initial_rows: &[usize],
    max_rounds: usize,
) -> Result<LpSolution> {
    p.validate()?;
    let norm_b = p.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let violation_cut = opts.tol * (1.0 + norm_b);

    let mut working: Vec<usize> = initial_rows.to_vec();
    working.sort_unstable();
    working.dedup();
    if working.last().map_or(false, |&r| r >= p.rows()) {
        return Err(Error::DimensionMismatch(
            "initial working set references missing rows".into(),
        ));
    }

    let mut ax = vec![0.0; p.rows()];
    let mut in_working = vec![false; p.rows()];
    for &r in &working {
        in_working[r] = true;
    }
    // Duals carry over between rounds (rows joining the set start at zero).
    let mut dual_guess: Vec<f64> = match &opts.warm_dual {
        Some(z0) => {
            if z0.len() != p.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "warm dual length {} vs {} rows",
                    z0.len(),
                    p.rows()
                )));
            }
            z0.clone()
        }
        None => vec![0.0; p.rows()],
    };
    for round in 0..max_rounds {
        let sub = LpProblem {
            cost: p.cost.clone(),
            matrix: p.matrix.select_rows(&working),
            rhs: working.iter().map(|&r| p.rhs[r]).collect(),
            signs: p.signs.clone(),
        };
        let sub_opts = SolverOptions {
            warm_dual: Some(working.iter().map(|&r| dual_guess[r]).collect()),
            ..opts.clone()
        };
        let sol = solve_lp(&sub, &sub_opts)?;
        for (w, &r) in working.iter().enumerate() {
            dual_guess[r] = sol.dual[w];
        }

        p.matrix.matvec(&sol.x, &mut ax);
        // Rows already in the working set may sit a solver tolerance past
        // the cut; only rows the subproblem has never seen count as
        // violations to resolve.
        let mut new_rows = Vec::new();
        for r in 0..p.rows() {
            if !in_working[r] && ax[r] - p.rhs[r] > violation_cut {
                new_rows.push(r);
            }
        }
        if new_rows.is_empty() {
            let mut dual = vec![0.0; p.rows()];
            for (w, &row) in working.iter().enumerate() {
                dual[row] = sol.dual[w];
            }
            let infeas = ax
                .iter()
                .zip(&p.rhs)
                .map(|(a, b)| (a - b).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt();
            return Ok(LpSolution {
                objective: p.objective(&sol.x),
                primal_residual_unscaled: infeas / (1.0 + norm_b),
                dual,
                ..sol
            });
        }
        if round + 1 == max_rounds {
            break;
        }
        for &r in &new_rows {
            in_working[r] = true;
        }
        working.extend(new_rows);
        working.sort_unstable();
    }
    Err(Error::SolverDidNotConverge {
        iterations: opts.max_iter,
        primal: f64::NAN,
        dual: f64::NAN,
        gap: f64::NAN,
    })
}
