//! Adaptive primal-dual hybrid gradient iteration for inequality-form LPs.
//!
//! The problem `min f'y  s.t. Ay <= b`, with `y` componentwise either
//! nonnegative or free, is solved as the saddle point of
//! `f'y + z'(Ay - b)` over `y` in the sign set and `z >= 0`. Both proximal
//! updates are closed-form clamps. Step sizes start at `0.95/||A||` and are
//! tuned online: a backtracking guard halves them whenever an iterate pair
//! violates the stability inner-product test, and residual balancing trades
//! `tau` against `sigma` to keep the primal and dual update residuals
//! comparable, preserving their product.

use super::{LpProblem, VarSign};
use std::io::Write;

/// Options for [`solve_pdhg`] and the surrounding pipeline.
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Termination tolerance on the scaled KKT residuals.
    pub tol: f64,
    pub max_iter: usize,
    /// Equilibration rounds applied by [`super::solve_lp`].
    pub precondition_passes: usize,
    /// Stability constant of the backtracking test.
    pub backtrack_c: f64,
    /// Multiplier applied to both steps when backtracking fires.
    pub backtrack_shrink: f64,
    /// Residual-imbalance ratio that triggers rebalancing.
    pub balance_delta: f64,
    /// Initial adaptivity level.
    pub alpha0: f64,
    /// Per-adjustment decay of the adaptivity level.
    pub alpha_decay: f64,
    /// Hard lower bound on the step sizes.
    pub step_floor: f64,
    /// Record a per-iteration residual/step trace in the report.
    pub record_trace: bool,
    /// Fixed primal weight `w`: start from `tau = base/w`, `sigma = base*w`.
    /// `None` derives the weight from the data norms.
    pub primal_weight: Option<f64>,
    /// Initial dual iterate in the row space of the problem handed to the
    /// solver (negative entries are clamped). [`super::solve_lp`] accepts
    /// it in the original row space and rescales.
    pub warm_dual: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1_000_000,
            precondition_passes: 1,
            backtrack_c: 0.9,
            backtrack_shrink: 0.5,
            balance_delta: 1.5,
            alpha0: 0.95,
            alpha_decay: 0.95,
            step_floor: 1e-12,
            record_trace: true,
            primal_weight: None,
            warm_dual: None,
        }
    }
}

/// Step-size state: the pair `(tau, sigma)` plus the adaptivity level.
#[derive(Debug, Clone)]
pub struct StepSizes {
    pub tau: f64,
    pub sigma: f64,
    alpha: f64,
    delta: f64,
    decay: f64,
    floor: f64,
    pub floor_hit: bool,
}

impl StepSizes {
    pub fn new(initial: f64, opts: &SolverOptions) -> Self {
        Self::asymmetric(initial, initial, opts)
    }

    pub fn asymmetric(tau: f64, sigma: f64, opts: &SolverOptions) -> Self {
        Self {
            tau,
            sigma,
            alpha: opts.alpha0,
            delta: opts.balance_delta,
            decay: opts.alpha_decay,
            floor: opts.step_floor,
            floor_hit: false,
        }
    }

    /// Residual balancing: grow the step of the side whose residual lags,
    /// keeping `tau * sigma` fixed, and cool the adaptivity level after
    /// every adjustment. Inside the band nothing changes.
    pub fn adapt(&mut self, primal_res: f64, dual_res: f64) {
        if primal_res > self.delta * dual_res {
            self.tau /= 1.0 - self.alpha;
            self.sigma *= 1.0 - self.alpha;
            self.alpha *= self.decay;
        } else if dual_res > self.delta * primal_res {
            self.tau *= 1.0 - self.alpha;
            self.sigma /= 1.0 - self.alpha;
            self.alpha *= self.decay;
        }
        self.clamp();
    }

    /// Backtracking shrink of both steps.
    pub fn shrink(&mut self, factor: f64) {
        self.tau *= factor;
        self.sigma *= factor;
        self.clamp();
    }

    fn clamp(&mut self) {
        if self.tau < self.floor {
            self.tau = self.floor;
            self.floor_hit = true;
        }
        if self.sigma < self.floor {
            self.sigma = self.floor;
            self.floor_hit = true;
        }
    }
}

/// One recorded iteration of the solve.
#[derive(Debug, Clone, Copy)]
pub struct TracePoint {
    pub iteration: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    pub tau: f64,
    pub sigma: f64,
}

/// Everything the iteration produced.
#[derive(Debug, Clone)]
pub struct SolverReport {
    /// Primal iterate of the problem as given (scaled space if the caller
    /// preconditioned).
    pub primal: Vec<f64>,
    /// Dual iterate; nonnegative.
    pub dual: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `f' y` of the returned primal.
    pub objective: f64,
    /// Scaled primal-feasibility residual at exit.
    pub primal_residual: f64,
    /// Scaled dual-feasibility residual at exit.
    pub dual_residual: f64,
    /// Scaled duality-gap residual at exit.
    pub gap: f64,
    pub tau: f64,
    pub sigma: f64,
    pub step_floor_hit: bool,
    pub trace: Vec<TracePoint>,
}

impl SolverReport {
    /// Dumps the residual trace as CSV (`iteration,primal_res,dual_res,tau,sigma`).
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,primal_res,dual_res,tau,sigma")?;
        for p in &self.trace {
            writeln!(
                out,
                "{},{},{},{},{}",
                p.iteration, p.primal_res, p.dual_res, p.tau, p.sigma
            )?;
        }
        Ok(())
    }
}

struct Workspace {
    y_next: Vec<f64>,
    z_next: Vec<f64>,
    ay: Vec<f64>,
    ay_next: Vec<f64>,
    atz: Vec<f64>,
    atz_next: Vec<f64>,
}

/// Running sums of iterates within a restart window. The pointwise PDHG
/// iterates orbit the solution set of a degenerate LP; the convergence
/// guarantee holds for the ergodic average, so termination also watches
/// the window average, and the iteration restarts from it whenever the
/// averaged residual has clearly improved. Products `A y` and `A'z` of the
/// average come free by linearity.
struct ErgodicWindow {
    y_sum: Vec<f64>,
    z_sum: Vec<f64>,
    ay_sum: Vec<f64>,
    atz_sum: Vec<f64>,
    count: usize,
}

impl ErgodicWindow {
    fn new(n: usize, m: usize) -> Self {
        Self {
            y_sum: vec![0.0; n],
            z_sum: vec![0.0; m],
            ay_sum: vec![0.0; m],
            atz_sum: vec![0.0; n],
            count: 0,
        }
    }

    fn reset(&mut self) {
        self.y_sum.fill(0.0);
        self.z_sum.fill(0.0);
        self.ay_sum.fill(0.0);
        self.atz_sum.fill(0.0);
        self.count = 0;
    }

    fn accumulate(&mut self, y: &[f64], z: &[f64], ay: &[f64], atz: &[f64]) {
        for (s, v) in self.y_sum.iter_mut().zip(y) {
            *s += v;
        }
        for (s, v) in self.z_sum.iter_mut().zip(z) {
            *s += v;
        }
        for (s, v) in self.ay_sum.iter_mut().zip(ay) {
            *s += v;
        }
        for (s, v) in self.atz_sum.iter_mut().zip(atz) {
            *s += v;
        }
        self.count += 1;
    }

    fn mean_into(&self, y: &mut [f64], z: &mut [f64], ay: &mut [f64], atz: &mut [f64]) {
        let inv = 1.0 / self.count as f64;
        for (dst, s) in y.iter_mut().zip(&self.y_sum) {
            *dst = s * inv;
        }
        for (dst, s) in z.iter_mut().zip(&self.z_sum) {
            *dst = s * inv;
        }
        for (dst, s) in ay.iter_mut().zip(&self.ay_sum) {
            *dst = s * inv;
        }
        for (dst, s) in atz.iter_mut().zip(&self.atz_sum) {
            *dst = s * inv;
        }
    }
}

/// Least-squares correction of the dual on the (nearly) active rows.
///
/// Degenerate duals wander a flat optimal set while their stationarity
/// residual decays sublinearly; solving the small normal system that
/// makes the reduced costs stationary, then clamping, usually lands
/// inside the optimal set at once. The caller adopts the polished dual
/// only when the measured residuals actually improve.
fn dual_polish(
    p: &LpProblem,
    y: &[f64],
    z: &[f64],
    ay: &[f64],
    atz: &[f64],
) -> Option<Vec<f64>> {
    let n = p.matrix.cols();
    let m = p.matrix.rows();

    // Plausibly active rows: carrying dual mass or nearly tight.
    let mut active: Vec<(f64, usize)> = (0..m)
        .filter_map(|i| {
            let slack = p.rhs[i] - ay[i];
            if z[i] > 0.0 || slack <= 1e-4 * (1.0 + p.rhs[i].abs()) {
                Some((slack.max(0.0), i))
            } else {
                None
            }
        })
        .collect();
    if active.is_empty() {
        return None;
    }
    let cap = 4 * n;
    if active.len() > cap {
        active.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        active.truncate(cap);
    }
    let rows: Vec<usize> = active.iter().map(|&(_, i)| i).collect();
    let k = rows.len();

    // Stationarity targets per column: free columns and interior
    // nonnegative columns want zero reduced cost; nonnegative columns at
    // their bound only need a nonnegative one.
    let mut targets: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let rc = p.cost[j] + atz[j];
        match p.signs[j] {
            VarSign::Free => targets.push((j, -rc)),
            VarSign::NonNegative => {
                if y[j] > 1e-9 {
                    targets.push((j, -rc));
                } else if rc < 0.0 {
                    targets.push((j, -rc));
                }
            }
        }
    }
    if targets.is_empty() {
        return None;
    }

    // G[t][a] = A[rows[a]][targets[t].0]; solve min ||r - G d||^2 (ridge).
    let mut g = nalgebra::DMatrix::zeros(targets.len(), k);
    for (a, &row) in rows.iter().enumerate() {
        for (c, v) in p.matrix.row(row) {
            if let Some(t) = targets.iter().position(|&(j, _)| j == c) {
                g[(t, a)] = v;
            }
        }
    }
    let r = nalgebra::DVector::from_iterator(targets.len(), targets.iter().map(|&(_, v)| v));
    let gtg = g.transpose() * &g + nalgebra::DMatrix::identity(k, k) * 1e-12;
    let gtr = g.transpose() * r;
    let delta = gtg.cholesky()?.solve(&gtr);

    let mut polished = z.to_vec();
    for (a, &row) in rows.iter().enumerate() {
        polished[row] = (polished[row] + delta[a]).max(0.0);
    }
    Some(polished)
}

/// KKT residuals of `(y, z)` scaled by the problem data norms.
fn kkt_residuals(
    p: &LpProblem,
    y: &[f64],
    z: &[f64],
    ay: &[f64],
    atz: &[f64],
    norm_b: f64,
    norm_f: f64,
) -> (f64, f64, f64) {
    let mut infeas = 0.0;
    for (r, &b) in p.rhs.iter().enumerate() {
        let v = (ay[r] - b).max(0.0);
        infeas += v * v;
    }
    let primal = infeas.sqrt() / (1.0 + norm_b);

    let mut dual_viol = 0.0;
    for (j, sign) in p.signs.iter().enumerate() {
        let v = p.cost[j] + atz[j];
        let viol = match sign {
            VarSign::Free => v,
            VarSign::NonNegative => v.min(0.0),
        };
        dual_viol += viol * viol;
    }
    let dual = dual_viol.sqrt() / (1.0 + norm_f);

    let fy: f64 = p.cost.iter().zip(y).map(|(f, y)| f * y).sum();
    let bz: f64 = p.rhs.iter().zip(z).map(|(b, z)| b * z).sum();
    let gap = (fy + bz).abs() / (1.0 + fy.abs() + bz.abs());
    (primal, dual, gap)
}

/// Runs the adaptive PDHG iteration. Never panics on non-convergence: the
/// report carries the last iterate and residual diagnostics either way.
pub fn solve_pdhg(p: &LpProblem, opts: &SolverOptions) -> SolverReport {
    let n = p.matrix.cols();
    let m = p.matrix.rows();
    let norm_a = super::sparse::spectral_norm_estimate(&p.matrix);
    let base = if norm_a > 0.0 { 0.95 / norm_a } else { 1.0 };

    let norm_b = p.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_f = p.cost.iter().map(|v| v * v).sum::<f64>().sqrt();

    // Primal weight: open with steps proportional to the data norms the
    // two sides fight against (the product stays at the stability bound).
    let mut omega = opts.primal_weight.unwrap_or_else(|| {
        if norm_f > 0.0 && norm_b > 0.0 {
            (norm_f / norm_b).sqrt().clamp(1e-6, 1e6)
        } else {
            1.0
        }
    });
    let mut steps = StepSizes::asymmetric(base / omega, base * omega, opts);

    let mut y = vec![0.0; n];
    let mut z = match &opts.warm_dual {
        Some(z0) => {
            debug_assert_eq!(z0.len(), m);
            z0.iter().map(|v| v.max(0.0)).collect()
        }
        None => vec![0.0; m],
    };
    let mut ws = Workspace {
        y_next: vec![0.0; n],
        z_next: vec![0.0; m],
        ay: vec![0.0; m],
        ay_next: vec![0.0; m],
        atz: vec![0.0; n],
        atz_next: vec![0.0; n],
    };
    if opts.warm_dual.is_some() {
        p.matrix.matvec_transpose(&z, &mut ws.atz);
    }

    let mut window = ErgodicWindow::new(n, m);
    let mut avg_y = vec![0.0; n];
    let mut avg_z = vec![0.0; m];
    let mut avg_ay = vec![0.0; m];
    let mut avg_atz = vec![0.0; n];
    let mut window_start_res = f64::INFINITY;
    let mut last_avg_res = f64::INFINITY;
    // Snapshots at the previous restart drive the primal-weight update:
    // the weight chases the ratio of dual to primal movement per epoch.
    let mut y_anchor = y.clone();
    let mut z_anchor = z.clone();
    const CHECK_EVERY: usize = 16;
    const RESTART_SUFFICIENT: f64 = 0.2;
    const RESTART_NECESSARY: f64 = 0.8;
    const WEIGHT_SMOOTHING: f64 = 0.5;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    // Residuals of the window average at its latest evaluation; the trace
    // reports whichever candidate (pointwise iterate or running average)
    // is currently better, since the solver terminates on either and the
    // cited convergence rate is the ergodic one.
    let mut avg_candidate: Option<(f64, f64, f64)> = None;
    let (mut primal_res, mut dual_res, mut gap);

    loop {
        let (pr, dr, g) = kkt_residuals(p, &y, &z, &ws.ay, &ws.atz, norm_b, norm_f);
        primal_res = pr;
        dual_res = dr;
        gap = g;
        if opts.record_trace {
            let point = match avg_candidate {
                Some((apr, adr, ag)) if apr.max(adr).max(ag) < pr.max(dr).max(g) => (apr, adr),
                _ => (pr, dr),
            };
            trace.push(TracePoint {
                iteration: iterations,
                primal_res: point.0,
                dual_res: point.1,
                tau: steps.tau,
                sigma: steps.sigma,
            });
        }
        if primal_res <= opts.tol && dual_res <= opts.tol && gap <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        if window_start_res.is_infinite() {
            window_start_res = pr.max(dr).max(g);
        }

        if window.count > 0 && window.count % CHECK_EVERY == 0 {
            window.mean_into(&mut avg_y, &mut avg_z, &mut avg_ay, &mut avg_atz);
            let (apr, adr, ag) =
                kkt_residuals(p, &avg_y, &avg_z, &avg_ay, &avg_atz, norm_b, norm_f);
            if apr <= opts.tol && adr <= opts.tol && ag <= opts.tol {
                y.copy_from_slice(&avg_y);
                z.copy_from_slice(&avg_z);
                primal_res = apr;
                dual_res = adr;
                gap = ag;
                converged = true;
                break;
            }
            let avg_res = apr.max(adr).max(ag);
            let cur_res = primal_res.max(dual_res).max(gap);
            avg_candidate = Some((apr, adr, ag));
            let best_res = avg_res.min(cur_res);
            let improved_enough = best_res <= RESTART_SUFFICIENT * window_start_res;
            let plateaued =
                best_res <= RESTART_NECESSARY * window_start_res && avg_res > last_avg_res;
            let overdue = window.count >= 1000.max(iterations / 4);
            if improved_enough || plateaued || overdue {
                // Restart from whichever point looks better.
                if avg_res <= cur_res {
                    y.copy_from_slice(&avg_y);
                    z.copy_from_slice(&avg_z);
                    ws.ay.copy_from_slice(&avg_ay);
                    ws.atz.copy_from_slice(&avg_atz);
                }
                if let Some(polished) = dual_polish(p, &y, &z, &ws.ay, &ws.atz) {
                    let mut atz_polished = vec![0.0; n];
                    p.matrix.matvec_transpose(&polished, &mut atz_polished);
                    let before =
                        kkt_residuals(p, &y, &z, &ws.ay, &ws.atz, norm_b, norm_f);
                    let after =
                        kkt_residuals(p, &y, &polished, &ws.ay, &atz_polished, norm_b, norm_f);
                    if after.0.max(after.1).max(after.2) < before.0.max(before.1).max(before.2)
                    {
                        z.copy_from_slice(&polished);
                        ws.atz.copy_from_slice(&atz_polished);
                    }
                }
                // Primal-weight update from the movement over the epoch.
                let dy_norm = y
                    .iter()
                    .zip(&y_anchor)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let dz_norm = z
                    .iter()
                    .zip(&z_anchor)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dy_norm > 1e-30 && dz_norm > 1e-30 {
                    let target = dz_norm / dy_norm;
                    omega = (WEIGHT_SMOOTHING * target.ln()
                        + (1.0 - WEIGHT_SMOOTHING) * omega.ln())
                    .exp()
                    .clamp(1e-6, 1e6);
                    steps.tau = base / omega;
                    steps.sigma = base * omega;
                }
                y_anchor.copy_from_slice(&y);
                z_anchor.copy_from_slice(&z);
                window.reset();
                window_start_res = best_res;
                last_avg_res = f64::INFINITY;
                avg_candidate = None;
            } else {
                last_avg_res = avg_res;
            }
        }

        // Candidate iterate, retried with halved steps until the
        // backtracking stability test accepts it.
        loop {
            let tau = steps.tau;
            let sigma = steps.sigma;
            for j in 0..n {
                let v = y[j] - tau * (ws.atz[j] + p.cost[j]);
                ws.y_next[j] = match p.signs[j] {
                    VarSign::NonNegative => v.max(0.0),
                    VarSign::Free => v,
                };
            }
            p.matrix.matvec(&ws.y_next, &mut ws.ay_next);
            for r in 0..m {
                let overshoot = 2.0 * ws.ay_next[r] - ws.ay[r];
                ws.z_next[r] = (z[r] + sigma * (overshoot - p.rhs[r])).max(0.0);
            }

            let mut dy2 = 0.0;
            for j in 0..n {
                let d = ws.y_next[j] - y[j];
                dy2 += d * d;
            }
            let mut dz2 = 0.0;
            let mut cross = 0.0;
            for r in 0..m {
                let d = ws.z_next[r] - z[r];
                dz2 += d * d;
                cross += d * (ws.ay_next[r] - ws.ay[r]);
            }
            let lhs = opts.backtrack_c * (dy2 / (2.0 * tau) + dz2 / (2.0 * sigma));
            if lhs >= 2.0 * cross {
                break;
            }
            if steps.tau <= opts.step_floor && steps.sigma <= opts.step_floor {
                break;
            }
            steps.shrink(opts.backtrack_shrink);
        }

        p.matrix.matvec_transpose(&ws.z_next, &mut ws.atz_next);

        // Goldstein-style update residuals drive the balancing, measured
        // relative to the data norm each side works against.
        let mut pres = 0.0;
        for j in 0..n {
            let v = (ws.y_next[j] - y[j]) / steps.tau - (ws.atz_next[j] - ws.atz[j]);
            pres += v * v;
        }
        let mut dres = 0.0;
        for r in 0..m {
            let v = (ws.z_next[r] - z[r]) / steps.sigma - (ws.ay_next[r] - ws.ay[r]);
            dres += v * v;
        }
        steps.adapt(
            pres.sqrt() / (1.0 + norm_f),
            dres.sqrt() / (1.0 + norm_b),
        );

        std::mem::swap(&mut y, &mut ws.y_next);
        std::mem::swap(&mut z, &mut ws.z_next);
        std::mem::swap(&mut ws.ay, &mut ws.ay_next);
        std::mem::swap(&mut ws.atz, &mut ws.atz_next);
        window.accumulate(&y, &z, &ws.ay, &ws.atz);
        iterations += 1;
    }

    // Last-chance polish when the iteration budget ran out with the dual
    // still short of tolerance.
    if !converged {
        if let Some(polished) = dual_polish(p, &y, &z, &ws.ay, &ws.atz) {
            let mut atz_polished = vec![0.0; n];
            p.matrix.matvec_transpose(&polished, &mut atz_polished);
            let (pr, dr, g) =
                kkt_residuals(p, &y, &polished, &ws.ay, &atz_polished, norm_b, norm_f);
            if pr.max(dr).max(g) < primal_res.max(dual_res).max(gap) {
                z = polished;
                primal_res = pr;
                dual_res = dr;
                gap = g;
                converged = pr <= opts.tol && dr <= opts.tol && g <= opts.tol;
            }
        }
    }

    let objective = p.cost.iter().zip(&y).map(|(f, y)| f * y).sum();
    SolverReport {
        primal: y,
        dual: z,
        iterations,
        converged,
        objective,
        primal_residual: primal_res,
        dual_residual: dual_res,
        gap,
        tau: steps.tau,
        sigma: steps.sigma,
        step_floor_hit: steps.floor_hit,
        trace,
    }
}
