//! Rank distributions, Wasserstein distance, and radius calibration.
//!
//! The calibration follows the asymptotic route: `sqrt(N)` times the
//! 1-Wasserstein distance between the empirical and the true rank
//! distribution converges weakly to `max_{u 1-Lipschitz} G'u` with
//! `G ~ N(0, Sigma(h))`, `Sigma(h)` the multinomial covariance. The ball
//! radius is the scaled empirical quantile of Monte Carlo draws from that
//! limit, with the covariance estimated from the same samples.

use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Probability vector over ranks `0..=M`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankDistribution {
    probs: Vec<f64>,
}

impl RankDistribution {
    const MASS_TOL: f64 = 1e-12;

    /// Validates nonnegativity and unit mass (within `1e-12`).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut total = 0.0;
        for (r, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "probability {p} at rank {r}"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > Self::MASS_TOL {
            return Err(Error::InvalidDistribution(format!(
                "total mass {total} differs from 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Point mass at `rank` on support `0..=max_rank`.
    pub fn point_mass(rank: usize, max_rank: usize) -> Result<Self> {
        if rank > max_rank {
            return Err(Error::SampleOutOfRange {
                rank,
                max: max_rank,
            });
        }
        let mut probs = vec![0.0; max_rank + 1];
        probs[rank] = 1.0;
        Ok(Self { probs })
    }

    pub fn uniform(max_rank: usize) -> Self {
        let n = max_rank + 1;
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Largest representable rank (`M`).
    pub fn max_rank(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn prob(&self, rank: usize) -> f64 {
        self.probs[rank]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| r as f64 * p)
            .sum()
    }

    /// Ranks with positive mass.
    pub fn support(&self) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(r, _)| r)
            .collect()
    }

    /// Draws one rank by inverse-CDF walk.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (r, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return r;
            }
        }
        self.probs.len() - 1
    }

    /// 1-Wasserstein distance on the unit-spaced support `0..=M`:
    /// the sum of absolute CDF differences, which attains the
    /// transport-problem optimum in one dimension.
    pub fn wasserstein(&self, other: &Self) -> Result<f64> {
        if self.probs.len() != other.probs.len() {
            return Err(Error::DimensionMismatch(format!(
                "support sizes {} vs {}",
                self.probs.len(),
                other.probs.len()
            )));
        }
        let mut cdf_gap = 0.0;
        let mut acc = 0.0;
        for r in 0..self.probs.len() - 1 {
            acc += self.probs[r] - other.probs[r];
            cdf_gap += acc.abs();
        }
        Ok(cdf_gap)
    }
}

/// Observed batch ranks, in arrival order.
#[derive(Debug, Clone)]
pub struct RankSamples {
    ranks: Vec<usize>,
    max_rank: usize,
}

impl RankSamples {
    pub fn new(ranks: Vec<usize>, max_rank: usize) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptySamples);
        }
        for &r in &ranks {
            if r > max_rank {
                return Err(Error::SampleOutOfRange {
                    rank: r,
                    max: max_rank,
                });
            }
        }
        Ok(Self { ranks, max_rank })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn max_rank(&self) -> usize {
        self.max_rank
    }

    /// Empirical rank distribution `h_r = #{j : r_j = r} / N`.
    pub fn empirical(&self) -> RankDistribution {
        let mut counts = vec![0usize; self.max_rank + 1];
        for &r in &self.ranks {
            counts[r] += 1;
        }
        let n = self.ranks.len() as f64;
        RankDistribution {
            probs: counts.iter().map(|&c| c as f64 / n).collect(),
        }
    }
}

/// Multinomial covariance `Sigma(h)`: diagonal `h_r (1 - h_r)`,
/// off-diagonal `-h_r h_s`. Rows sum to zero; the matrix is PSD.
pub fn multinomial_covariance(h: &RankDistribution) -> DMatrix<f64> {
    let n = h.probs.len();
    DMatrix::from_fn(n, n, |r, s| {
        if r == s {
            h.probs[r] * (1.0 - h.probs[r])
        } else {
            -h.probs[r] * h.probs[s]
        }
    })
}

/// Sampler for the weak limit of `sqrt(N) * W(h, h_N)`.
///
/// Holds a square root of `Sigma(h)` obtained by symmetric
/// eigendecomposition with negative eigenvalues clamped to zero, which
/// stays well defined when `h` has small support and `Sigma` is rank
/// deficient.
pub struct LimitStatisticSampler {
    factor: DMatrix<f64>,
}

impl LimitStatisticSampler {
    pub fn new(h: &RankDistribution) -> Self {
        let sigma = multinomial_covariance(h);
        let eig = sigma.symmetric_eigen();
        let n = eig.eigenvalues.len();
        let mut factor = eig.eigenvectors;
        for c in 0..n {
            let scale = eig.eigenvalues[c].max(0.0).sqrt();
            for r in 0..n {
                factor[(r, c)] *= scale;
            }
        }
        Self { factor }
    }

    /// One draw of `G ~ N(0, Sigma(h))`. The all-ones vector spans the
    /// kernel of every multinomial covariance, so the law lives on the
    /// zero-sum hyperplane; the draw is projected back onto it to remove
    /// the eigenfactor's numerical leakage.
    pub fn sample_gaussian<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.factor.nrows();
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut g: Vec<f64> = (0..n)
            .map(|r| (0..n).map(|c| self.factor[(r, c)] * z[c]).sum())
            .collect();
        let mean = g.iter().sum::<f64>() / n as f64;
        g.iter_mut().for_each(|v| *v -= mean);
        g
    }

    /// `max_{u in Phi*} g'u` for a vector whose coordinates sum to zero:
    /// the maximum over 1-Lipschitz `u` on `0..=M` collapses to the sum of
    /// absolute prefix sums.
    pub fn statistic_of(g: &[f64]) -> f64 {
        let mut prefix = 0.0;
        let mut value = 0.0;
        for v in &g[..g.len() - 1] {
            prefix += v;
            value += prefix.abs();
        }
        value
    }

    /// One draw of `max_{u in Phi*} G'u`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        Self::statistic_of(&self.sample_gaussian(rng))
    }
}

/// One draw of the limiting statistic for `h`. Builds the covariance
/// factor on every call; use [`LimitStatisticSampler`] for repeated draws.
pub fn limit_statistic_sample<R: Rng + ?Sized>(h: &RankDistribution, rng: &mut R) -> f64 {
    LimitStatisticSampler::new(h).sample(rng)
}

/// Output of the Monte Carlo radius calibration.
#[derive(Debug, Clone)]
pub struct RadiusCalibration {
    pub eta: f64,
    pub draws: usize,
    /// Calibrated ambiguity radius `rho = q / sqrt(N)`.
    pub rho: f64,
    /// The empirical quantile of the limit draws (before the `sqrt(N)`
    /// scaling).
    pub quantile: f64,
    /// Quantile level actually used (see [`quantile_level`]).
    pub level: f64,
}

/// Quantile level for confidence parameter `eta`. The calibration keeps
/// the upper tail: level `max(eta, 1 - eta)`, so `eta = 0.95` and
/// `eta = 0.05` both select the 0.95-quantile.
pub fn quantile_level(eta: f64) -> f64 {
    eta.max(1.0 - eta)
}

/// Calibrates the Wasserstein radius from `draws` Monte Carlo samples of
/// the limiting statistic under `Sigma(h_emp)`: the empirical
/// `quantile_level(eta)`-quantile (ceil-index order statistic) divided by
/// `sqrt(N)`.
pub fn calibrate_radius<R: Rng + ?Sized>(
    h_emp: &RankDistribution,
    sample_count: usize,
    eta: f64,
    draws: usize,
    rng: &mut R,
) -> Result<RadiusCalibration> {
    if !(0.0..1.0).contains(&eta) || eta <= 0.0 {
        return Err(Error::InvalidCalibration(format!(
            "eta {eta} not in (0, 1)"
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidCalibration("zero Monte Carlo draws".into()));
    }
    if sample_count == 0 {
        return Err(Error::InvalidCalibration("zero sample count".into()));
    }
    let sampler = LimitStatisticSampler::new(h_emp);
    let mut xs: Vec<f64> = (0..draws).map(|_| sampler.sample(rng)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let level = quantile_level(eta);
    let idx = ((draws as f64 * level).ceil() as usize).clamp(1, draws) - 1;
    let quantile = xs[idx];
    Ok(RadiusCalibration {
        eta,
        draws,
        rho: quantile / (sample_count as f64).sqrt(),
        quantile,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(probs: &[f64]) -> RankDistribution {
        RankDistribution::new(probs.to_vec()).unwrap()
    }

    #[test]
    fn empirical_counts() {
        let s = RankSamples::new(vec![2, 2, 4], 4).unwrap();
        let h = s.empirical();
        assert_eq!(h.probs(), &[0.0, 0.0, 2.0 / 3.0, 0.0, 1.0 / 3.0]);

        let s = RankSamples::new(vec![0], 2).unwrap();
        assert_eq!(s.empirical().probs(), &[1.0, 0.0, 0.0]);

        let s = RankSamples::new((0..=5).collect(), 5).unwrap();
        assert_eq!(s.empirical(), RankDistribution::uniform(5));
    }

    #[test]
    fn samples_validation() {
        assert!(matches!(
            RankSamples::new(vec![], 4),
            Err(Error::EmptySamples)
        ));
        assert!(matches!(
            RankSamples::new(vec![5], 4),
            Err(Error::SampleOutOfRange { .. })
        ));
    }

    #[test]
    fn wasserstein_point_masses() {
        let m = 9;
        let a = RankDistribution::point_mass(0, m).unwrap();
        let b = RankDistribution::point_mass(m, m).unwrap();
        assert_eq!(a.wasserstein(&b).unwrap(), m as f64);
        assert_eq!(a.wasserstein(&a).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_rejects_mismatched_support() {
        let a = RankDistribution::uniform(3);
        let b = RankDistribution::uniform(4);
        assert!(a.wasserstein(&b).is_err());
    }

    #[test]
    fn covariance_known_values() {
        let h = dist(&[0.5, 0.5]);
        let sigma = multinomial_covariance(&h);
        assert!((sigma[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((sigma[(0, 1)] + 0.25).abs() < 1e-15);
        assert!((sigma[(1, 0)] + 0.25).abs() < 1e-15);
        assert!((sigma[(1, 1)] - 0.25).abs() < 1e-15);

        let h = RankDistribution::point_mass(0, 3).unwrap();
        assert!(multinomial_covariance(&h).amax() < 1e-15);
    }

    #[test]
    fn covariance_rows_sum_to_zero() {
        let h = dist(&[0.1, 0.25, 0.3, 0.0, 0.35]);
        let sigma = multinomial_covariance(&h);
        for r in 0..5 {
            let s: f64 = (0..5).map(|c| sigma[(r, c)]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn limit_statistic_point_mass_is_zero() {
        let h = RankDistribution::point_mass(2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..32 {
            assert!(limit_statistic_sample(&h, &mut rng).abs() < 1e-12);
        }
    }

    #[test]
    fn limit_statistic_m1_is_half_normal() {
        // For M = 1 the statistic is |G_0|; check the sample mean against
        // E|G_0| = sqrt(2/pi) * sd with sd^2 = h0 h1.
        let h = dist(&[0.3, 0.7]);
        let sampler = LimitStatisticSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 40000;
        let mean: f64 = (0..n).map(|_| sampler.sample(&mut rng)).sum::<f64>() / n as f64;
        let want = (2.0 / std::f64::consts::PI).sqrt() * (0.3f64 * 0.7).sqrt();
        assert!(
            (mean - want).abs() < 0.01,
            "sample mean {mean} vs analytic {want}"
        );
    }

    #[test]
    fn calibrate_point_mass_gives_zero_radius() {
        let h = RankDistribution::point_mass(3, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cal = calibrate_radius(&h, 15, 0.95, 500, &mut rng).unwrap();
        assert!(cal.rho.abs() < 1e-12);
    }

    #[test]
    fn calibrate_scales_with_sqrt_n() {
        let h = dist(&[0.25, 0.25, 0.25, 0.25]);
        let a = calibrate_radius(&h, 100, 0.95, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = calibrate_radius(&h, 400, 0.95, 2000, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!((a.rho / b.rho - 2.0).abs() < 1e-12);
    }

    #[test]
    fn calibrate_monotone_in_confidence() {
        // Same draws, increasing retained quantile level: rho must not
        // decrease as eta grows past 0.5 (i.e. rho nonincreasing in 1-eta).
        let h = dist(&[0.2, 0.2, 0.2, 0.2, 0.2]);
        let etas = [0.6, 0.8, 0.9, 0.95, 0.99];
        let rhos: Vec<f64> = etas
            .iter()
            .map(|&eta| {
                calibrate_radius(&h, 50, eta, 4000, &mut ChaCha8Rng::seed_from_u64(5))
                    .unwrap()
                    .rho
            })
            .collect();
        for w in rhos.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn calibrate_rejects_bad_parameters() {
        let h = RankDistribution::uniform(4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(calibrate_radius(&h, 10, 0.0, 100, &mut rng).is_err());
        assert!(calibrate_radius(&h, 10, 1.0, 100, &mut rng).is_err());
        assert!(calibrate_radius(&h, 10, 0.95, 0, &mut rng).is_err());
        assert!(calibrate_radius(&h, 0, 0.95, 100, &mut rng).is_err());
    }

    #[test]
    fn calibrate_stable_across_seeds() {
        // Monte Carlo stability: the same instance calibrated with
        // different RNG streams agrees within 5% relative.
        let samples = RankSamples::new(vec![3, 5, 5, 7, 9, 9, 9, 11, 12, 12, 13, 14, 15, 16, 16], 16)
            .unwrap();
        let h = samples.empirical();
        let base = calibrate_radius(&h, 15, 0.95, 10000, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap()
            .rho;
        assert!(base > 0.0);
        for seed in 8..12 {
            let rho = calibrate_radius(&h, 15, 0.95, 10000, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .rho;
            assert!((rho - base).abs() / base < 0.05);
        }
    }

    #[test]
    fn empirical_wasserstein_concentrates_near_limit_mean() {
        // sqrt(N) * W(h_N, h) over repeated draws should match the Monte
        // Carlo mean of the limiting statistic within 15% for N = 10^4.
        let m = 8;
        let h = RankDistribution::uniform(m);
        let sampler = LimitStatisticSampler::new(&h);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let limit_mean: f64 = (0..20000).map(|_| sampler.sample(&mut rng)).sum::<f64>() / 20000.0;

        let n = 10_000usize;
        let trials = 200;
        let mut acc = 0.0;
        for _ in 0..trials {
            let mut counts = vec![0usize; m + 1];
            for _ in 0..n {
                counts[h.sample(&mut rng)] += 1;
            }
            let emp = RankDistribution::new(
                counts.iter().map(|&c| c as f64 / n as f64).collect(),
            )
            .unwrap();
            acc += (n as f64).sqrt() * emp.wasserstein(&h).unwrap();
        }
        let emp_mean = acc / trials as f64;
        assert!(
            (emp_mean - limit_mean).abs() / limit_mean < 0.15,
            "empirical {emp_mean} vs limit {limit_mean}"
        );
    }

    proptest! {
        #[test]
        fn wasserstein_is_a_metric(
            a in prop::collection::vec(0.01f64..1.0, 5),
            b in prop::collection::vec(0.01f64..1.0, 5),
            c in prop::collection::vec(0.01f64..1.0, 5),
        ) {
            let norm = |v: Vec<f64>| {
                let s: f64 = v.iter().sum();
                RankDistribution::new(v.iter().map(|x| x / s).collect()).unwrap()
            };
            let (a, b, c) = (norm(a), norm(b), norm(c));
            let ab = a.wasserstein(&b).unwrap();
            let ba = b.wasserstein(&a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(a.wasserstein(&a).unwrap() < 1e-12);
            let ac = a.wasserstein(&c).unwrap();
            let cb = c.wasserstein(&b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn covariance_is_psd(v in prop::collection::vec(0.0f64..1.0, 6)) {
            let s: f64 = v.iter().sum();
            prop_assume!(s > 1e-9);
            let h = RankDistribution::new(v.iter().map(|x| x / s).collect()).unwrap();
            let sigma = multinomial_covariance(&h);
            let eig = sigma.symmetric_eigen();
            for ev in eig.eigenvalues.iter() {
                prop_assert!(*ev >= -1e-10);
            }
        }
    }
}
