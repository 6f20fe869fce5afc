//! Run configuration: a single TOML document with full validation and
//! explicit defaults. Command-line flags override individual keys.

use recoding_core::lp_solver::SolverOptions;
use recoding_core::netsim::{LineNetwork, TrialConfig};
use serde::{Deserialize, Serialize};

/// Which figure-style experiment the `experiment` command reproduces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    /// Per-link estimation quality across sample sizes.
    Fig1,
    /// Hop-by-hop degradation over the full line network.
    Fig2,
}

/// All tunables of a run. Unknown keys in the file are rejected with an
/// error naming the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Batch size `M`.
    pub m: usize,
    /// Per-node packet budget.
    pub t_avg: f64,
    /// Loss rate applied to every link (unless `loss_rates` is given).
    pub loss_rate: f64,
    /// Per-link loss rates; length must equal `hops` when present.
    pub loss_rates: Option<Vec<f64>>,
    /// Number of links in the line network.
    pub hops: usize,
    /// Packets the source sends per batch; defaults to `t_avg`.
    pub t0: Option<f64>,
    /// Observed ranks per estimation (`N`).
    pub sample_size: usize,
    /// Independent trials per experiment cell (`T`).
    pub trials: usize,
    /// Confidence level for the radius calibration.
    pub eta: f64,
    /// Monte Carlo draws per calibration (`L`).
    pub calib_draws: usize,
    /// Solver tolerance.
    pub tol: f64,
    /// Solver iteration cap.
    pub max_iter: usize,
    pub seed: u64,
    pub output_dir: String,
    pub experiment: Experiment,
    /// Links studied by the fig1 experiment.
    pub links: Vec<usize>,
    /// Sample-size grid of the fig1 experiment.
    pub sample_sizes: Vec<usize>,
    /// Budgets of the fig2 line networks.
    pub t_avg_grid: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 16,
            t_avg: 16.0,
            loss_rate: 0.2,
            loss_rates: None,
            hops: 10,
            t0: None,
            sample_size: 15,
            trials: 10,
            eta: 0.95,
            calib_draws: 10_000,
            tol: 1e-6,
            max_iter: 1_000_000,
            seed: 0,
            output_dir: "out".into(),
            experiment: Experiment::Fig1,
            links: vec![1, 4, 7, 10],
            sample_sizes: vec![5, 10, 15, 25, 50, 100],
            t_avg_grid: vec![16.0, 20.0],
        }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| format!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.m == 0 || self.m > 256 {
            return Err(format!("m = {} outside 1..=256", self.m));
        }
        if !self.t_avg.is_finite() || self.t_avg <= 0.0 {
            return Err(format!("t_avg = {} must be positive", self.t_avg));
        }
        let mut rates = vec![self.loss_rate];
        if let Some(per_link) = &self.loss_rates {
            if per_link.len() != self.hops {
                return Err(format!(
                    "loss_rates has {} entries for {} hops",
                    per_link.len(),
                    self.hops
                ));
            }
            rates.extend(per_link.iter());
        }
        for &p in &rates {
            if !p.is_finite() || !(0.0..1.0).contains(&p) {
                return Err(format!("loss rate {p} outside [0, 1)"));
            }
        }
        if self.hops == 0 {
            return Err("hops must be at least 1".into());
        }
        if let Some(t0) = self.t0 {
            if !t0.is_finite() || t0 < 0.0 {
                return Err(format!("t0 = {t0} must be nonnegative"));
            }
        }
        if self.sample_size == 0 || self.trials == 0 {
            return Err("sample_size and trials must be positive".into());
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(format!("eta = {} outside (0, 1)", self.eta));
        }
        if self.calib_draws == 0 {
            return Err("calib_draws must be positive".into());
        }
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(format!("tol = {} must be positive", self.tol));
        }
        if self.max_iter == 0 {
            return Err("max_iter must be positive".into());
        }
        if self.links.is_empty() || self.links.iter().any(|&l| l == 0 || l > self.hops) {
            return Err(format!(
                "links {:?} must be nonempty and within 1..={}",
                self.links, self.hops
            ));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err("sample_sizes must be nonempty and positive".into());
        }
        if self.t_avg_grid.is_empty() || self.t_avg_grid.iter().any(|&t| t <= 0.0) {
            return Err("t_avg_grid must be nonempty and positive".into());
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolverOptions::default()
        }
    }

    pub fn trial_config(&self) -> TrialConfig {
        TrialConfig {
            trials: self.trials,
            eta: self.eta,
            calib_draws: self.calib_draws,
            seed: self.seed,
            solver: self.solver_options(),
        }
    }

    /// The line network this configuration describes, with `t_avg`
    /// overridable for the fig2 grid.
    pub fn network(&self, t_avg: f64) -> Result<LineNetwork, recoding_core::Error> {
        let t0 = self.t0.unwrap_or(t_avg);
        match &self.loss_rates {
            Some(rates) => {
                let links = rates
                    .iter()
                    .map(|&p| recoding_core::rank_model::ChannelModel::new(p, self.m))
                    .collect::<Result<Vec<_>, _>>()?;
                LineNetwork::new(links, t0, t_avg)
            }
            None => LineNetwork::uniform(self.loss_rate, self.m, self.hops, t0, t_avg),
        }
    }

    /// Canonical TOML echo of the validated configuration.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
