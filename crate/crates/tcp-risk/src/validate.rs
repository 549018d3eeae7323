//! Simulation-based validators for the two coverage guarantees:
//! finite-sample validity of the split-conformal interval on
//! exchangeable data, and long-run coverage of the Robbins-Monro
//! threshold update on an ergodic series.

use serde::{Deserialize, Serialize};

use crate::benchmarks::GarchParams;
use crate::conformal::{
    adaptive_update, form_interval, split_conformal_interval, ConformalState, ModelId, ScoreSet,
};
use crate::error::Result;
use crate::rng::CounterRng;
use crate::stats::normal_quantile;
use crate::synth::gen_garch;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Result {
    pub n_cal: usize,
    pub n_test: usize,
    pub trials: usize,
    pub alpha: f64,
    pub mean_coverage: f64,
    pub std_error: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub pass: bool,
}

/// Finite-sample validity check: iid Gaussian data, point predictor 0,
/// absolute-residual scores. Mean coverage across trials must land in
/// [1 - alpha, 1 - alpha + 1/(n_cal + 1) + 3 SE].
pub fn validate_theorem1(
    n_cal: usize,
    n_test: usize,
    trials: usize,
    alpha: f64,
    seed: u64,
) -> Result<Theorem1Result> {
    let mut coverages = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = CounterRng::with_stream(seed, trial as u64);
        let cal: Vec<f64> = (0..n_cal).map(|_| rng.next_normal().abs()).collect();
        let interval = split_conformal_interval(&ScoreSet::new(cal), 0.0, alpha, 0)?;
        let covered = (0..n_test)
            .filter(|_| interval.covers(rng.next_normal()))
            .count();
        coverages.push(covered as f64 / n_test as f64);
    }
    let mean = coverages.iter().sum::<f64>() / trials as f64;
    let var = coverages.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>()
        / (trials.max(2) - 1) as f64;
    let se = (var / trials as f64).sqrt();
    let lower_bound = 1.0 - alpha;
    let upper_bound = 1.0 - alpha + 1.0 / (n_cal + 1) as f64 + 3.0 * se;
    Ok(Theorem1Result {
        n_cal,
        n_test,
        trials,
        alpha,
        mean_coverage: mean,
        std_error: se,
        lower_bound,
        upper_bound,
        pass: mean >= lower_bound && mean <= upper_bound,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem2Result {
    pub steps: usize,
    pub alpha: f64,
    pub running_coverage: f64,
    pub coverage_tolerance: f64,
    pub c_midpoint: f64,
    pub c_final: f64,
    pub settle_tolerance: f64,
    pub pass: bool,
}

/// Long-run coverage check: pure Robbins-Monro update (kappa = 0)
/// around a fixed symmetric base band on a simulated GARCH series.
pub fn validate_theorem2(steps: usize, alpha: f64, seed: u64) -> Result<Theorem2Result> {
    let params = GarchParams::new(0.05, 0.1, 0.85)?;
    let series = gen_garch(steps, &params, seed)?;
    // Base band at the Gaussian quantile of the stationary scale; the
    // update only has to learn the heavy-tail correction.
    let base = normal_quantile(1.0 - alpha / 2.0) * params.stationary_variance().sqrt();

    let mut state = ConformalState::new(alpha, 0.01, 0.01, 0.75, 0.0)?;
    let mut covered = 0usize;
    let mut c_midpoint = 0.0;
    for (t, &r) in series.returns.iter().enumerate() {
        let (interval, _) = form_interval(-base, base, state.c, t, ModelId::Tcp);
        if interval.covers(r) {
            covered += 1;
        }
        state = adaptive_update(&state, r, &interval);
        if t + 1 == steps / 2 {
            c_midpoint = state.c;
        }
    }
    let running_coverage = covered as f64 / steps as f64;
    let coverage_tolerance = 0.005;
    let settle_tolerance = 0.05;
    let pass = (running_coverage - (1.0 - alpha)).abs() <= coverage_tolerance
        && (state.c - c_midpoint).abs() < settle_tolerance;
    Ok(Theorem2Result {
        steps,
        alpha,
        running_coverage,
        coverage_tolerance,
        c_midpoint,
        c_final: state.c,
        settle_tolerance,
        pass,
    })
}
