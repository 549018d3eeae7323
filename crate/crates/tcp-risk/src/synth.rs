//! Deterministic synthetic return generators for validation and tests.
//!
//! All generators are pure functions of (parameters, seed); draws come
//! from the counter-based SplitMix64 stream in [`crate::rng`] with the
//! inverse-CDF normal transform.

use crate::benchmarks::{garch_recursion, GarchParams};
use crate::data::{ReturnSeries, ReturnUnit};
use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub use crate::rng::CounterRng as SynthRng;

/// Piecewise-Gaussian regime specification.
#[derive(Debug, Clone)]
pub struct RegimeSpec {
    /// (length, volatility, mean) per segment.
    pub segments: Vec<(usize, f64, f64)>,
}

impl RegimeSpec {
    pub fn validate(&self) -> Result<()> {
        let total: usize = self.segments.iter().map(|s| s.0).sum();
        if self.segments.is_empty() || total == 0 {
            return Err(Error::Precondition("regime spec has no segments".into()));
        }
        if self.segments.iter().any(|s| s.1 <= 0.0) {
            return Err(Error::Precondition("regime volatilities must be > 0".into()));
        }
        Ok(())
    }
}

/// n iid Gaussian draws.
pub fn gen_iid_gaussian(n: usize, mean: f64, sd: f64, seed: u64) -> Result<ReturnSeries> {
    if n == 0 || sd <= 0.0 {
        return Err(Error::Precondition(format!("n={n}, sd={sd}")));
    }
    let mut rng = CounterRng::new(seed);
    let vals = (0..n).map(|_| mean + sd * rng.next_normal()).collect();
    Ok(ReturnSeries::from_values(vals, ReturnUnit::Percent))
}

/// GARCH(1,1) simulation started at the stationary variance.
pub fn gen_garch(n: usize, p: &GarchParams, seed: u64) -> Result<ReturnSeries> {
    p.validate()?;
    if n == 0 {
        return Err(Error::Precondition("n must be >= 1".into()));
    }
    let mut rng = CounterRng::new(seed);
    let mut var = p.stationary_variance();
    let mut vals = Vec::with_capacity(n);
    let mut prev = 0.0;
    for t in 0..n {
        if t > 0 {
            var = garch_recursion(p, prev, var);
        }
        let r = var.sqrt() * rng.next_normal();
        vals.push(r);
        prev = r;
    }
    Ok(ReturnSeries::from_values(vals, ReturnUnit::Percent))
}

/// Concatenated Gaussian segments with per-segment mean and volatility.
pub fn gen_regime_shift(spec: &RegimeSpec, seed: u64) -> Result<ReturnSeries> {
    spec.validate()?;
    let mut rng = CounterRng::new(seed);
    let total: usize = spec.segments.iter().map(|s| s.0).sum();
    let mut vals = Vec::with_capacity(total);
    for &(len, vol, mean) in &spec.segments {
        for _ in 0..len {
            vals.push(mean + vol * rng.next_normal());
        }
    }
    Ok(ReturnSeries::from_values(vals, ReturnUnit::Percent))
}

/// Reconstruct a price path from returns by exponentiating the
/// cumulative sum from a base price of 100.
pub fn returns_to_prices(r: &ReturnSeries) -> Vec<f64> {
    let scale = match r.unit {
        ReturnUnit::Percent => 0.01,
        ReturnUnit::Raw => 1.0,
    };
    let mut prices = Vec::with_capacity(r.len() + 1);
    let mut p = 100.0;
    prices.push(p);
    for &ret in &r.returns {
        p *= (scale * ret).exp();
        prices.push(p);
    }
    prices
}

#[cfg(test)]
fn sample_mean_sd(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
fn autocorr(vals: &[f64], lag: usize) -> f64 {
    let (mean, sd) = sample_mean_sd(vals);
    let var = sd * sd;
    let n = vals.len();
    let cov = (lag..n)
        .map(|i| (vals[i] - mean) * (vals[i - lag] - mean))
        .sum::<f64>()
        / (n - lag) as f64;
    cov / var
}
