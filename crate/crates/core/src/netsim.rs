//! Rank-level line-network simulator and experiment harnesses.
//!
//! Batches traverse a chain of lossy links; only their ranks are tracked.
//! Node `k` receives batches through link `k`, estimates its input rank
//! distribution from a few observed ranks, fits a recoding policy with one
//! of three methods, and transmits over the next link. The harnesses
//! reproduce the two benchmark protocols: per-link estimation quality as a
//! function of sample size, and end-to-end degradation over ten hops.
//!
//! Policies are scored by effective throughput: the normalized expected
//! next-hop rank, scaled down proportionally when the policy overspends
//! the packet budget on the true distribution.

use crate::distributions::{calibrate_radius, RankDistribution, RankSamples};
use crate::dro::{solve_dro, DroInstance};
use crate::lp_solver::SolverOptions;
use crate::rank_model::{ChannelModel, ExpectedRankTable};
use crate::saa::{objective, solve_saa_greedy, solve_saa_lp, Budget, RecodingVector};
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// A chain of lossy links with one batch source.
///
/// The source emits full-rank batches as `t0` packets into the first
/// link; every intermediate node shares the per-batch budget `t_avg`.
#[derive(Debug, Clone)]
pub struct LineNetwork {
    links: Vec<ChannelModel>,
    t0: f64,
    t_avg: f64,
}

impl LineNetwork {
    pub fn new(links: Vec<ChannelModel>, t0: f64, t_avg: f64) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::InvalidChannel("a line network needs links".into()));
        }
        let m = links[0].batch_size();
        if links.iter().any(|l| l.batch_size() != m) {
            return Err(Error::InvalidChannel(
                "all links must share the batch size".into(),
            ));
        }
        if !t0.is_finite() || t0 < 0.0 {
            return Err(Error::InvalidPacketCount(t0));
        }
        Budget::new(t_avg)?;
        Ok(Self { links, t0, t_avg })
    }

    /// Uniform network: `hops` identical links.
    pub fn uniform(loss_rate: f64, batch_size: usize, hops: usize, t0: f64, t_avg: f64) -> Result<Self> {
        let link = ChannelModel::new(loss_rate, batch_size)?;
        Self::new(vec![link; hops.max(1)], t0, t_avg)
    }

    pub fn hops(&self) -> usize {
        self.links.len()
    }

    pub fn batch_size(&self) -> usize {
        self.links[0].batch_size()
    }

    /// Link `index` (0-based): the channel from node `index` into node
    /// `index + 1`, node 0 being the source.
    pub fn link(&self, index: usize) -> &ChannelModel {
        &self.links[index]
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_avg(&self) -> f64 {
        self.t_avg
    }

    pub fn budget(&self) -> Budget {
        Budget::new(self.t_avg).unwrap()
    }
}

/// Pushes a rank distribution through one recoding stage: every rank-`r`
/// batch is recoded into `t_r` packets and crosses `link`.
pub fn propagate(
    h: &RankDistribution,
    t: &RecodingVector,
    link: &ChannelModel,
) -> Result<RankDistribution> {
    if h.max_rank() != link.batch_size() || t.max_rank() != link.batch_size() {
        return Err(Error::DimensionMismatch(format!(
            "distribution rank {} / policy rank {} vs batch size {}",
            h.max_rank(),
            t.max_rank(),
            link.batch_size()
        )));
    }
    let mut probs = vec![0.0; h.max_rank() + 1];
    for r in 0..=h.max_rank() {
        let mass = h.prob(r);
        if mass == 0.0 {
            continue;
        }
        let law = link.rank_transition(r, t.get(r))?;
        for (s, p) in law.probs().iter().enumerate() {
            probs[s] += mass * p;
        }
    }
    RankDistribution::new(probs)
}

/// Input rank distribution at the first node: full-rank batches sent as
/// `t0` packets across the first link.
pub fn source_distribution(net: &LineNetwork) -> Result<RankDistribution> {
    net.link(0).rank_transition(net.batch_size(), net.t0())
}

/// Effective throughput of a policy on the true distribution: the
/// normalized objective, scaled by `t_avg / spend` when the policy
/// overspends its budget in expectation. Always in `[0, 1]`.
pub fn effective_throughput(
    h_true: &RankDistribution,
    table: &ExpectedRankTable,
    t: &RecodingVector,
    t_avg: f64,
) -> Result<f64> {
    let util = objective(h_true, table, t)?;
    let spend: f64 = (0..=h_true.max_rank())
        .map(|r| h_true.prob(r) * t.get(r))
        .sum();
    let penalty = if spend > t_avg { t_avg / spend } else { 1.0 };
    Ok(util / table.batch_size() as f64 * penalty)
}

/// Benchmark throughput when the distribution is known exactly: the
/// greedy optimum evaluated on itself.
pub fn optimal_throughput(
    h_true: &RankDistribution,
    table: &ExpectedRankTable,
    t_avg: f64,
) -> Result<f64> {
    let sol = solve_saa_greedy(h_true, table, &Budget::new(t_avg)?)?;
    effective_throughput(h_true, table, &sol.policy, t_avg)
}

/// Policy-fitting method under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SaaPrimal,
    SaaLp,
    Dro,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SaaPrimal, Method::SaaLp, Method::Dro];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::SaaPrimal => write!(f, "SAA-primal"),
            Method::SaaLp => write!(f, "SAA-LP"),
            Method::Dro => write!(f, "DRO"),
        }
    }
}

/// Shared knobs of one experiment run.
#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub trials: usize,
    pub eta: f64,
    /// Monte Carlo draws per radius calibration.
    pub calib_draws: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            trials: 10,
            eta: 0.95,
            calib_draws: 10_000,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// One aggregated line of an experiment: a method at a link (or hop) and
/// sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub method: Method,
    /// Link index for the sample-size experiment, hop index for the hop
    /// experiment (both 1-based).
    pub position: usize,
    pub sample_size: usize,
    pub t_avg: f64,
    pub trials: usize,
    /// Mean effective throughput over successful trials.
    pub mean_throughput: f64,
    /// Reference throughput the squared error is measured against.
    pub optimal: f64,
    /// `log10` of the mean squared error; `None` encodes an exact zero
    /// (written as `-inf` in CSV).
    pub log10_mse: Option<f64>,
    pub failures: usize,
}

/// CSV dump of experiment rows
/// (`method,link_or_hop,N,t_avg,trials,mean_throughput,optimal,log10_mse,failures`).
pub fn write_rows_csv<W: Write>(rows: &[TrialRow], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "method,link_or_hop,N,t_avg,trials,mean_throughput,optimal,log10_mse,failures"
    )?;
    for row in rows {
        let log_mse = match row.log10_mse {
            Some(v) => v.to_string(),
            None => "-inf".to_string(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.method,
            row.position,
            row.sample_size,
            row.t_avg,
            row.trials,
            row.mean_throughput,
            row.optimal,
            log_mse,
            row.failures
        )?;
    }
    Ok(())
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Deterministic per-context RNG stream.
fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(seed);
    for &t in tags {
        state = splitmix64(state ^ t);
    }
    ChaCha8Rng::seed_from_u64(state)
}

const TAG_SAMPLES: u64 = 0xA11CE;
const TAG_CALIBRATION: u64 = 0xB0B;

/// Fits one method on a sample set. The calibration RNG is consumed only
/// by the robust method.
pub fn fit_policy(
    method: Method,
    samples: &RankSamples,
    table: &ExpectedRankTable,
    budget: &Budget,
    eta: f64,
    calib_draws: usize,
    calib_rng: &mut ChaCha8Rng,
) -> Result<RecodingVector> {
    match method {
        Method::SaaPrimal => Ok(solve_saa_greedy(&samples.empirical(), table, budget)?.policy),
        Method::SaaLp => Ok(solve_saa_lp(
            &samples.empirical(),
            table,
            budget,
            &SolverOptions::default(),
        )?
        .policy),
        Method::Dro => {
            let cal = calibrate_radius(
                &samples.empirical(),
                samples.len(),
                eta,
                calib_draws,
                calib_rng,
            )?;
            let inst = DroInstance::new(
                samples.clone(),
                table,
                cal.rho,
                cal.rho,
                *budget,
            )?;
            Ok(solve_dro(&inst, &SolverOptions::default())?.policy)
        }
    }
}

struct LinkTables {
    tables: Vec<ExpectedRankTable>,
}

impl LinkTables {
    fn build(net: &LineNetwork) -> Result<Self> {
        let tables = (0..net.hops())
            .map(|i| ExpectedRankTable::with_defaults(net.link(i)))
            .collect::<Result<_>>()?;
        Ok(Self { tables })
    }

    /// Table of the channel node `node` (1-based) transmits on: the next
    /// link, or a copy of the last link for the final node.
    fn outgoing(&self, node: usize) -> &ExpectedRankTable {
        &self.tables[node.min(self.tables.len() - 1)]
    }
}

/// True input rank distribution at node `link`, assuming every upstream
/// node recodes with the exact-distribution greedy optimum.
pub fn true_distribution_at(net: &LineNetwork, link: usize) -> Result<RankDistribution> {
    if link == 0 || link > net.hops() {
        return Err(Error::DimensionMismatch(format!(
            "link {link} outside 1..={}",
            net.hops()
        )));
    }
    let tables = LinkTables::build(net)?;
    let mut h = source_distribution(net)?;
    for node in 1..link {
        let pol = solve_saa_greedy(&h, tables.outgoing(node), &net.budget())?.policy;
        h = propagate(&h, &pol, net.link(node))?;
    }
    Ok(h)
}

struct MethodAccumulator {
    sq_err: f64,
    throughput: f64,
    successes: usize,
    failures: usize,
}

impl MethodAccumulator {
    fn new() -> Self {
        Self {
            sq_err: 0.0,
            throughput: 0.0,
            successes: 0,
            failures: 0,
        }
    }

    fn record(&mut self, throughput: f64, reference: f64) {
        self.sq_err += (throughput - reference).powi(2);
        self.throughput += throughput;
        self.successes += 1;
    }

    fn row(
        &self,
        method: Method,
        position: usize,
        sample_size: usize,
        t_avg: f64,
        trials: usize,
        optimal: f64,
    ) -> TrialRow {
        let mse = if self.successes > 0 {
            self.sq_err / self.successes as f64
        } else {
            f64::NAN
        };
        TrialRow {
            method,
            position,
            sample_size,
            t_avg,
            trials,
            mean_throughput: if self.successes > 0 {
                self.throughput / self.successes as f64
            } else {
                f64::NAN
            },
            optimal,
            log10_mse: if mse > 0.0 || mse.is_nan() {
                Some(mse.log10())
            } else {
                None
            },
            failures: self.failures,
        }
    }
}

/// Per-link estimation benchmark: at each studied link, the true input
/// distribution is computed with optimal upstream recoding; each trial
/// draws `N` ranks, fits all three methods on the same draw, and scores
/// them against the known-distribution optimum.
pub fn run_sample_size_experiment(
    net: &LineNetwork,
    links: &[usize],
    sample_sizes: &[usize],
    cfg: &TrialConfig,
) -> Result<Vec<TrialRow>> {
    if links.is_empty() || sample_sizes.is_empty() || cfg.trials == 0 {
        return Err(Error::InvalidCalibration(
            "experiment grid must be nonempty".into(),
        ));
    }
    let tables = LinkTables::build(net)?;
    let budget = net.budget();
    let mut rows = Vec::new();
    for &link in links {
        let h = true_distribution_at(net, link)?;
        let table = tables.outgoing(link);
        let optimal = optimal_throughput(&h, table, net.t_avg())?;
        for &n in sample_sizes {
            let mut accs: Vec<MethodAccumulator> =
                Method::ALL.iter().map(|_| MethodAccumulator::new()).collect();
            for trial in 0..cfg.trials {
                let tags = [TAG_SAMPLES, link as u64, n as u64, trial as u64];
                let mut rng_s = derive_rng(cfg.seed, &tags);
                let ranks: Vec<usize> = (0..n).map(|_| h.sample(&mut rng_s)).collect();
                let samples = RankSamples::new(ranks, net.batch_size())?;
                for (mi, &method) in Method::ALL.iter().enumerate() {
                    let mut rng_c = derive_rng(
                        cfg.seed,
                        &[TAG_CALIBRATION, link as u64, n as u64, trial as u64],
                    );
                    match fit_policy(
                        method,
                        &samples,
                        table,
                        &budget,
                        cfg.eta,
                        cfg.calib_draws,
                        &mut rng_c,
                    ) {
                        Ok(pol) => {
                            let tp = effective_throughput(&h, table, &pol, net.t_avg())?;
                            accs[mi].record(tp, optimal);
                        }
                        Err(_) => accs[mi].failures += 1,
                    }
                }
            }
            for (mi, &method) in Method::ALL.iter().enumerate() {
                rows.push(accs[mi].row(method, link, n, net.t_avg(), cfg.trials, optimal));
            }
        }
    }
    Ok(rows)
}

/// Hop-by-hop benchmark: each method estimates, recodes, and propagates
/// its own distribution through all hops (fresh samples at every node);
/// every hop's throughput is scored against the first-hop optimum.
pub fn run_hop_experiment(
    net: &LineNetwork,
    sample_size: usize,
    cfg: &TrialConfig,
) -> Result<Vec<TrialRow>> {
    if sample_size == 0 || cfg.trials == 0 {
        return Err(Error::InvalidCalibration(
            "experiment grid must be nonempty".into(),
        ));
    }
    let tables = LinkTables::build(net)?;
    let budget = net.budget();
    let hops = net.hops();
    let h1 = source_distribution(net)?;
    let optimal1 = optimal_throughput(&h1, tables.outgoing(1), net.t_avg())?;

    let mut accs: Vec<Vec<MethodAccumulator>> = Method::ALL
        .iter()
        .map(|_| (0..hops).map(|_| MethodAccumulator::new()).collect())
        .collect();

    for (mi, &method) in Method::ALL.iter().enumerate() {
        for trial in 0..cfg.trials {
            let mut h = h1.clone();
            let mut dead = false;
            for hop in 1..=hops {
                if dead {
                    accs[mi][hop - 1].failures += 1;
                    continue;
                }
                let tags = [TAG_SAMPLES, hop as u64, sample_size as u64, trial as u64];
                let mut rng_s = derive_rng(cfg.seed, &tags);
                let ranks: Vec<usize> =
                    (0..sample_size).map(|_| h.sample(&mut rng_s)).collect();
                let samples = RankSamples::new(ranks, net.batch_size())?;
                let mut rng_c = derive_rng(
                    cfg.seed,
                    &[
                        TAG_CALIBRATION,
                        hop as u64,
                        sample_size as u64,
                        trial as u64,
                    ],
                );
                let table = tables.outgoing(hop);
                match fit_policy(
                    method,
                    &samples,
                    table,
                    &budget,
                    cfg.eta,
                    cfg.calib_draws,
                    &mut rng_c,
                ) {
                    Ok(pol) => {
                        let tp = effective_throughput(&h, table, &pol, net.t_avg())?;
                        accs[mi][hop - 1].record(tp, optimal1);
                        if hop < hops {
                            h = propagate(&h, &pol, net.link(hop))?;
                        }
                    }
                    Err(_) => {
                        accs[mi][hop - 1].failures += 1;
                        dead = true;
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for hop in 1..=hops {
        for (mi, &method) in Method::ALL.iter().enumerate() {
            rows.push(accs[mi][hop - 1].row(
                method,
                hop,
                sample_size,
                net.t_avg(),
                cfg.trials,
                optimal1,
            ));
        }
    }
    Ok(rows)
}
