//! Expected-rank model of a lossy link.
//!
//! A batch of rank `r` sent as `t` packets over an independent-loss channel
//! arrives with expected rank `E_r(t)`. With loss rate `p` and a field large
//! enough that any `k` received packets of a rank-`r` batch span `min(r, k)`
//! dimensions, the function is a plain binomial expectation. Non-integer `t`
//! means "send `floor(t)+1` packets with probability `frac(t)`, else
//! `floor(t)`", which linearly interpolates the integer values.
//!
//! `E_r` is concave and monotone in `t`, so it admits an exact
//! piecewise-linear representation `E_r(t) = min_i (delta[r][i]*t + zeta[r][i])`
//! over unit segments. [`ExpectedRankTable`] precomputes the segment slopes
//! and intercepts up to the point where the marginal gain becomes
//! numerically irrelevant; the table is what the optimizers consume.

use crate::distributions::RankDistribution;
use crate::{Error, Result};
use std::io::Write;

/// Independent packet-loss channel together with the batch size in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    loss_rate: f64,
    batch_size: usize,
}

impl ChannelModel {
    /// Largest supported batch size.
    pub const MAX_BATCH_SIZE: usize = 256;

    pub fn new(loss_rate: f64, batch_size: usize) -> Result<Self> {
        if !loss_rate.is_finite() || !(0.0..1.0).contains(&loss_rate) {
            return Err(Error::InvalidChannel(format!(
                "loss rate {loss_rate} not in [0, 1)"
            )));
        }
        if batch_size == 0 || batch_size > Self::MAX_BATCH_SIZE {
            return Err(Error::InvalidChannel(format!(
                "batch size {batch_size} not in 1..={}",
                Self::MAX_BATCH_SIZE
            )));
        }
        Ok(Self {
            loss_rate,
            batch_size,
        })
    }

    pub fn loss_rate(&self) -> f64 {
        self.loss_rate
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Probability mass function of Binomial(t, 1-p): the law of the number
    /// of packets that survive the link when `t` are sent.
    fn arrival_pmf(&self, t: usize) -> Vec<f64> {
        let q = 1.0 - self.loss_rate;
        let p = self.loss_rate;
        let mut pmf = vec![0.0; t + 1];
        if p == 0.0 {
            pmf[t] = 1.0;
            return pmf;
        }
        // Direct evaluation term by term; fine in double precision at the
        // packet counts this crate works with.
        let mut binom = 1.0f64; // C(t, k)
        for k in 0..=t {
            pmf[k] = binom * q.powi(k as i32) * p.powi((t - k) as i32);
            binom *= (t - k) as f64 / (k + 1) as f64;
        }
        pmf
    }

    /// Expected rank at the next node for a rank-`r` batch sent as exactly
    /// `t` packets: `sum_k P(Binom(t, 1-p) = k) * min(r, k)`.
    pub fn expected_rank_integer(&self, rank: usize, packets: usize) -> Result<f64> {
        if rank > self.batch_size {
            return Err(Error::RankOutOfRange {
                rank,
                max: self.batch_size,
            });
        }
        if rank == 0 || packets == 0 {
            return Ok(0.0);
        }
        let pmf = self.arrival_pmf(packets);
        let mut acc = 0.0;
        for (k, mass) in pmf.iter().enumerate() {
            acc += mass * k.min(rank) as f64;
        }
        Ok(acc)
    }

    /// Expected rank for fractional `t` (randomized packet count).
    pub fn expected_rank(&self, rank: usize, packets: f64) -> Result<f64> {
        if !packets.is_finite() || packets < 0.0 {
            return Err(Error::InvalidPacketCount(packets));
        }
        let lo = packets.floor();
        let frac = packets - lo;
        let lo = lo as usize;
        let e_lo = self.expected_rank_integer(rank, lo)?;
        if frac == 0.0 {
            return Ok(e_lo);
        }
        let e_hi = self.expected_rank_integer(rank, lo + 1)?;
        Ok(frac * e_hi + (1.0 - frac) * e_lo)
    }

    /// Law of the next-hop rank of a rank-`r` batch sent as `t` packets:
    /// the arrival count truncated at `r`, mixed over the two integer packet
    /// counts when `t` is fractional. The mean equals [`Self::expected_rank`].
    pub fn rank_transition(&self, rank: usize, packets: f64) -> Result<RankDistribution> {
        if rank > self.batch_size {
            return Err(Error::RankOutOfRange {
                rank,
                max: self.batch_size,
            });
        }
        if !packets.is_finite() || packets < 0.0 {
            return Err(Error::InvalidPacketCount(packets));
        }
        let mut probs = vec![0.0; self.batch_size + 1];
        let lo = packets.floor() as usize;
        let frac = packets - packets.floor();
        let mut add_law = |t: usize, weight: f64| {
            if weight == 0.0 {
                return;
            }
            let pmf = self.arrival_pmf(t);
            for (k, mass) in pmf.iter().enumerate() {
                probs[k.min(rank)] += weight * mass;
            }
        };
        add_law(lo, 1.0 - frac);
        if frac > 0.0 {
            add_law(lo + 1, frac);
        }
        RankDistribution::new(probs)
    }
}

/// One row of the piecewise-linear table: the unit segments of `E_r`.
#[derive(Debug, Clone)]
struct RankRow {
    /// `E_r(i)` for `i in 0..=i_max+1`.
    values: Vec<f64>,
    /// `delta[i] = E_r(i+1) - E_r(i)` for `i in 0..=i_max`.
    slopes: Vec<f64>,
    /// `zeta[i] = E_r(i) - i*delta[i]` for `i in 0..=i_max`.
    intercepts: Vec<f64>,
}

/// Piecewise-linear decomposition of `E_r` for every rank `r` of a channel.
///
/// Per rank, the segment scan stops at the first unit segment whose slope
/// falls below the construction threshold (the flat tail of `E_r` carries no
/// optimization value), hard-capped so construction always terminates.
#[derive(Debug, Clone)]
pub struct ExpectedRankTable {
    model: ChannelModel,
    rows: Vec<RankRow>,
}

impl ExpectedRankTable {
    /// Default slope threshold terminating the per-rank segment scan.
    pub const DEFAULT_EPSILON: f64 = 1e-9;
    /// Default hard cap on segments per rank.
    pub const DEFAULT_HARD_CAP: usize = 128;

    /// Builds the table by scanning unit segments of `E_r` per rank until
    /// the marginal gain drops below `epsilon` (capped at `hard_cap`).
    pub fn build(model: &ChannelModel, epsilon: f64, hard_cap: usize) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::InvalidChannel(format!(
                "table threshold {epsilon} must be positive"
            )));
        }
        if hard_cap < model.batch_size() {
            return Err(Error::InvalidChannel(format!(
                "hard cap {hard_cap} below batch size {}",
                model.batch_size()
            )));
        }
        let mut rows = Vec::with_capacity(model.batch_size() + 1);
        for r in 0..=model.batch_size() {
            let mut values = vec![0.0];
            let mut slopes = Vec::new();
            let mut i = 0usize;
            loop {
                let next = model.expected_rank_integer(r, i + 1)?;
                let delta = next - values[i];
                values.push(next);
                slopes.push(delta);
                if delta < epsilon || i == hard_cap {
                    break;
                }
                i += 1;
            }
            let intercepts = slopes
                .iter()
                .enumerate()
                .map(|(i, d)| values[i] - i as f64 * d)
                .collect();
            rows.push(RankRow {
                values,
                slopes,
                intercepts,
            });
        }
        Ok(Self {
            model: *model,
            rows,
        })
    }

    /// Table with the default threshold and cap.
    pub fn with_defaults(model: &ChannelModel) -> Result<Self> {
        Self::build(model, Self::DEFAULT_EPSILON, Self::DEFAULT_HARD_CAP)
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn batch_size(&self) -> usize {
        self.model.batch_size()
    }

    /// Last segment index stored for rank `r`; the piecewise form is exact
    /// on `[0, i_max(r)]`.
    pub fn i_max(&self, rank: usize) -> usize {
        self.rows[rank].slopes.len() - 1
    }

    /// Largest `i_max` over all ranks: the uniform segment count used when
    /// ranks are padded to a common length.
    pub fn max_segments(&self) -> usize {
        (0..=self.batch_size()).map(|r| self.i_max(r)).max().unwrap()
    }

    /// Tabulated `E_r(i)`; defined for `i <= i_max(r) + 1`.
    pub fn value(&self, rank: usize, i: usize) -> f64 {
        self.rows[rank].values[i]
    }

    /// Segment slope, padded flat (zero) past `i_max(r)` so every rank can
    /// be treated as having the same number of segments. Padding never
    /// changes the piecewise minimum on `[0, i_max(r)]` because `E_r` is
    /// monotone.
    pub fn slope(&self, rank: usize, i: usize) -> f64 {
        let row = &self.rows[rank];
        if i < row.slopes.len() {
            row.slopes[i]
        } else {
            0.0
        }
    }

    /// Segment intercept, padded with `E_r(i_max)` past `i_max(r)`.
    pub fn intercept(&self, rank: usize, i: usize) -> f64 {
        let row = &self.rows[rank];
        if i < row.intercepts.len() {
            row.intercepts[i]
        } else {
            row.values[row.slopes.len() - 1]
        }
    }

    /// `E_r(t)` by linear interpolation of the tabulated integer values;
    /// `t` must lie in `[0, i_max(r)]`.
    pub fn expected_rank(&self, rank: usize, t: f64) -> Result<f64> {
        let i_max = self.i_max(rank);
        if !t.is_finite() || t < 0.0 || t > i_max as f64 {
            return Err(Error::OutsidePiecewiseDomain {
                rank,
                value: t,
                max: i_max,
            });
        }
        let row = &self.rows[rank];
        let lo = t.floor() as usize;
        let frac = t - lo as f64;
        if frac == 0.0 {
            return Ok(row.values[lo]);
        }
        Ok(row.values[lo] + frac * (row.values[lo + 1] - row.values[lo]))
    }

    /// `E_r(t)` as the minimum over stored segments `delta*t + zeta`.
    /// Equals [`Self::expected_rank`] on the shared domain.
    pub fn eval_piecewise(&self, rank: usize, t: f64) -> Result<f64> {
        let i_max = self.i_max(rank);
        if !t.is_finite() || t < 0.0 || t > i_max as f64 {
            return Err(Error::OutsidePiecewiseDomain {
                rank,
                value: t,
                max: i_max,
            });
        }
        let row = &self.rows[rank];
        let mut best = f64::INFINITY;
        for (d, z) in row.slopes.iter().zip(row.intercepts.iter()) {
            let v = d * t + z;
            if v < best {
                best = v;
            }
        }
        Ok(best)
    }

    /// Dumps the table as CSV with columns `r,i,E,delta,zeta`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r,i,E,delta,zeta")?;
        for (r, row) in self.rows.iter().enumerate() {
            for i in 0..row.slopes.len() {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r, i, row.values[i], row.slopes[i], row.intercepts[i]
                )?;
            }
        }
        Ok(())
    }
}
