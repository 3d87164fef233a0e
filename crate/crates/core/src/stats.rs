//! Wilson score intervals, one-sided Fisher exact test and the Monte Carlo
//! estimate of the worst-case re-plan count over a batch of trials.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::StatsError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

pub const Z95: f64 = 1.959963984540054;

/// 95% Wilson score interval.
pub fn wilson(successes: u64, n: u64) -> Result<Interval, StatsError> {
    wilson_z(successes, n, Z95)
}

pub fn wilson_z(successes: u64, n: u64, z: f64) -> Result<Interval, StatsError> {
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if successes > n {
        return Err(StatsError::SuccessesExceedTrials { successes, n });
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // The bounds are exactly 0 and 1 at the extremes; avoid rounding residue.
    let lower = if successes == 0 { 0.0 } else { (center - half).clamp(0.0, 1.0) };
    let upper = if successes as f64 == n { 1.0 } else { (center + half).clamp(0.0, 1.0) };
    Ok(Interval { lower, upper })
}

fn ln_factorial(n: u64) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// P(A successes >= observed) under fixed margins; alternative A > B.
pub fn fisher_one_sided(a_succ: u64, a_fail: u64, b_succ: u64, b_fail: u64) -> Result<f64, StatsError> {
    let n_a = a_succ + a_fail;
    let n_b = b_succ + b_fail;
    let succ = a_succ + b_succ;
    let total = n_a + n_b;
    if total == 0 {
        return Err(StatsError::EmptyTable);
    }
    let ln_denom = ln_choose(total, succ);
    let hi = n_a.min(succ);
    let p: f64 = (a_succ..=hi).filter(|&x| succ - x <= n_b).map(|x| (ln_choose(n_a, x) + ln_choose(n_b, succ - x) - ln_denom).exp()).sum();
    Ok(p.min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTail {
    pub expected_max: f64,
    pub pct95: u64,
}

const SHARD: u64 = 1000;

/// Replications of the maximum, over `n_trials`, of the number of planning
/// cycles until the first success when each cycle fails with `p_fail`;
/// `P(X > k) = p_fail^k`. Shards of 1000 replications get their own
/// sub-seeds and merge in shard order.
pub fn geometric_tail_mc(p_fail: f64, n_trials: u64, replications: u64, seed: u64) -> Result<GeoTail, StatsError> {
    if !(0.0..1.0).contains(&p_fail) {
        return Err(StatsError::BadProbability(p_fail));
    }
    if n_trials == 0 || replications == 0 {
        return Err(StatsError::EmptySample);
    }
    if p_fail == 0.0 {
        return Ok(GeoTail { expected_max: 1.0, pct95: 1 });
    }
    let geo = Geometric::new(1.0 - p_fail).map_err(|_| StatsError::BadProbability(p_fail))?;
    let shards = replications.div_ceil(SHARD);
    let mut maxima: Vec<u64> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ s.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let len = SHARD.min(replications - s * SHARD);
            (0..len).map(|_| (0..n_trials).map(|_| geo.sample(&mut rng) + 1).max().unwrap_or(0)).collect::<Vec<_>>()
        })
        .collect();
    let expected_max = maxima.iter().sum::<u64>() as f64 / replications as f64;
    maxima.sort_unstable();
    let idx = ((0.95 * replications as f64).ceil() as usize).saturating_sub(1);
    Ok(GeoTail { expected_max, pct95: maxima[idx] })
}
