//! Benchmark interval models: GARCH(1,1) with Gaussian intervals,
//! rolling historical simulation, and the static quantile-regression
//! band.

use serde::{Deserialize, Serialize};

use crate::conformal::{ModelId, PredictionInterval};
use crate::data::{FeatureRow, ReturnSeries};
use crate::error::{Error, Result};
use crate::quantile::{predict_ordered_pair, FittedQuantileModel};
use crate::stats::{nearest_rank_quantile, normal_quantile};

/// GARCH(1,1) parameters; stationarity requires alpha + beta < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub omega: f64,
    pub alpha_g: f64,
    pub beta_g: f64,
}

impl GarchParams {
    pub fn new(omega: f64, alpha_g: f64, beta_g: f64) -> Result<Self> {
        let p = Self {
            omega,
            alpha_g,
            beta_g,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.omega > 0.0
            && self.alpha_g >= 0.0
            && self.beta_g >= 0.0
            && self.alpha_g + self.beta_g < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid GARCH params {self:?}")))
        }
    }

    /// Unconditional variance omega / (1 - alpha - beta).
    pub fn stationary_variance(&self) -> f64 {
        self.omega / (1.0 - self.alpha_g - self.beta_g)
    }
}

/// Fitted parameters plus the achieved quasi-likelihood.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GarchFit {
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub loglik: f64,
}

impl GarchFit {
    pub fn params(&self) -> GarchParams {
        GarchParams {
            omega: self.omega,
            alpha_g: self.alpha,
            beta_g: self.beta,
        }
    }
}

/// One step of the variance recursion.
pub fn garch_recursion(p: &GarchParams, r_prev: f64, var_prev: f64) -> f64 {
    p.omega + p.alpha_g * r_prev * r_prev + p.beta_g * var_prev
}

/// Gaussian quasi-log-likelihood, variance recursion seeded with the
/// sample variance of the series.
pub fn garch_loglik(p: &GarchParams, r: &ReturnSeries) -> Result<f64> {
    p.validate()?;
    let n = r.len();
    if n < 10 {
        return Err(Error::InsufficientData(format!(
            "GARCH likelihood needs at least 10 returns, got {n}"
        )));
    }
    let mean_sq = r.returns.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let mean = r.returns.iter().sum::<f64>() / n as f64;
    let mut var = (mean_sq - mean * mean).max(1e-12);

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    let mut ll = 0.0;
    for (t, &rt) in r.returns.iter().enumerate() {
        if t > 0 {
            var = garch_recursion(p, r.returns[t - 1], var);
        }
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::Numeric {
                step: t,
                msg: format!("non-positive conditional variance {var}"),
            });
        }
        ll += -HALF_LN_2PI - 0.5 * var.ln() - 0.5 * rt * rt / var;
        if !ll.is_finite() {
            return Err(Error::Numeric {
                step: t,
                msg: "non-finite log-likelihood".into(),
            });
        }
    }
    Ok(ll)
}

// Unconstrained parameterization for the simplex search: omega through
// log, persistence through a logistic capped just below 1, and a
// logistic split of the persistence between alpha and beta.
fn decode(theta: &[f64; 3]) -> GarchParams {
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let persistence = 0.9999 * sigmoid(theta[1]);
    let share = sigmoid(theta[2]);
    GarchParams {
        omega: theta[0].exp(),
        alpha_g: persistence * share,
        beta_g: persistence * (1.0 - share),
    }
}

fn encode(p: &GarchParams) -> [f64; 3] {
    let logit = |x: f64| (x / (1.0 - x)).ln();
    let persistence = ((p.alpha_g + p.beta_g) / 0.9999).clamp(1e-6, 1.0 - 1e-6);
    let share = (p.alpha_g / (p.alpha_g + p.beta_g).max(1e-12)).clamp(1e-6, 1.0 - 1e-6);
    [p.omega.ln(), logit(persistence), logit(share)]
}

fn nelder_mead<F: Fn(&[f64; 3]) -> f64>(f: &F, start: [f64; 3], iters: usize) -> ([f64; 3], f64) {
    let mut simplex: Vec<([f64; 3], f64)> = Vec::with_capacity(4);
    simplex.push((start, f(&start)));
    for d in 0..3 {
        let mut v = start;
        v[d] += 0.5;
        simplex.push((v, f(&v)));
    }

    for _ in 0..iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[3].1);
        if (worst - best).abs() < 1e-11 {
            break;
        }
        let mut centroid = [0.0; 3];
        for s in &simplex[..3] {
            for d in 0..3 {
                centroid[d] += s.0[d] / 3.0;
            }
        }
        let wv = simplex[3].0;
        let point = |coef: f64| {
            let mut p = [0.0; 3];
            for d in 0..3 {
                p[d] = centroid[d] + coef * (centroid[d] - wv[d]);
            }
            p
        };

        let refl = point(1.0);
        let f_refl = f(&refl);
        if f_refl < simplex[0].1 {
            let exp = point(2.0);
            let f_exp = f(&exp);
            simplex[3] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < simplex[2].1 {
            simplex[3] = (refl, f_refl);
        } else {
            let contr = point(-0.5);
            let f_contr = f(&contr);
            if f_contr < simplex[3].1 {
                simplex[3] = (contr, f_contr);
            } else {
                let anchor = simplex[0].0;
                for s in simplex.iter_mut().skip(1) {
                    for d in 0..3 {
                        s.0[d] = anchor[d] + 0.5 * (s.0[d] - anchor[d]);
                    }
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex[0].0, simplex[0].1)
}

/// Quasi-maximum-likelihood fit via a derivative-free simplex search
/// from 8 spread starting points.
pub fn fit_garch(r: &ReturnSeries) -> Result<GarchFit> {
    if r.len() < 100 {
        return Err(Error::InsufficientData(format!(
            "GARCH fit needs at least 100 returns, got {}",
            r.len()
        )));
    }
    let var_hat = {
        let n = r.len() as f64;
        let mean = r.returns.iter().sum::<f64>() / n;
        (r.returns.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).max(1e-12)
    };

    let objective = |theta: &[f64; 3]| -> f64 {
        match garch_loglik(&decode(theta), r) {
            Ok(ll) if ll.is_finite() => -ll,
            _ => f64::INFINITY,
        }
    };

    let mut best: Option<([f64; 3], f64)> = None;
    let mut best_start = f64::INFINITY;
    for &persistence in &[0.9, 0.6] {
        for &share in &[0.1, 0.5] {
            for &scale in &[1.0, 0.3] {
                let start_params = GarchParams {
                    omega: (var_hat * (1.0 - persistence) * scale).max(1e-10),
                    alpha_g: persistence * share,
                    beta_g: persistence * (1.0 - share),
                };
                let start = encode(&start_params);
                best_start = best_start.min(objective(&start));
                let (theta, value) = nelder_mead(&objective, start, 500);
                if best.as_ref().map_or(true, |b| value < b.1) {
                    best = Some((theta, value));
                }
            }
        }
    }

    let (theta, value) = best.expect("at least one restart ran");
    let params = decode(&theta);
    if !value.is_finite() || value > best_start + 1e-9 {
        return Err(Error::OptimizationFailure {
            msg: "no restart improved over its starting point".into(),
            omega: params.omega,
            alpha: params.alpha_g,
            beta: params.beta_g,
            loglik: -value,
        });
    }
    params.validate()?;
    Ok(GarchFit {
        omega: params.omega,
        alpha: params.alpha_g,
        beta: params.beta_g,
        loglik: -value,
    })
}

/// Gaussian interval 0 +/- z_{1 - alpha/2} * sqrt(var).
pub fn garch_interval(var_t: f64, alpha: f64, time_index: usize) -> PredictionInterval {
    let half = if var_t > 0.0 {
        normal_quantile(1.0 - alpha / 2.0) * var_t.sqrt()
    } else {
        0.0
    };
    PredictionInterval {
        lower: -half,
        upper: half,
        time_index,
        model_id: ModelId::Garch,
    }
}

/// Rolling buffer of the last `window` returns.
#[derive(Debug, Clone)]
pub struct HistWindow {
    pub window: usize,
    buffer: std::collections::VecDeque<f64>,
}

impl HistWindow {
    pub fn new(window: usize) -> Self {
        assert!(window > 0);
        Self {
            window,
            buffer: std::collections::VecDeque::with_capacity(window),
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(r);
    }

    pub fn is_full(&self) -> bool {
        self.buffer.len() == self.window
    }

    /// Window mean, reported for diagnostics.
    pub fn mean(&self) -> f64 {
        if self.buffer.is_empty() {
            0.0
        } else {
            self.buffer.iter().sum::<f64>() / self.buffer.len() as f64
        }
    }

    /// Empirical [alpha/2, 1 - alpha/2] band by nearest-rank-above;
    /// `None` while the buffer is still warming up.
    pub fn interval(&self, alpha: f64, time_index: usize) -> Option<PredictionInterval> {
        if !self.is_full() {
            return None;
        }
        let vals: Vec<f64> = self.buffer.iter().copied().collect();
        Some(PredictionInterval {
            lower: nearest_rank_quantile(&vals, alpha / 2.0),
            upper: nearest_rank_quantile(&vals, 1.0 - alpha / 2.0),
            time_index,
            model_id: ModelId::Hist,
        })
    }
}

/// Free-function form of the historical-simulation band.
pub fn hist_sim_interval(
    h: &HistWindow,
    alpha: f64,
    time_index: usize,
) -> Option<PredictionInterval> {
    h.interval(alpha, time_index)
}

/// Static quantile-regression band; crossings repaired by swap, the
/// bool reports whether a swap happened.
pub fn static_qr_predict(
    pair: (&FittedQuantileModel, &FittedQuantileModel),
    row: &FeatureRow,
    time_index: usize,
) -> Result<(PredictionInterval, bool)> {
    let (lo, hi, crossed) = predict_ordered_pair(pair.0, pair.1, &row.to_vec())?;
    Ok((
        PredictionInterval {
            lower: lo,
            upper: hi,
            time_index,
            model_id: ModelId::Qr,
        },
        crossed,
    ))
}
