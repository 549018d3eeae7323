//! Non-conformity scoring, conformal thresholds, interval formation,
//! and the online Robbins-Monro threshold update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::nearest_rank_index;

/// Which model issued an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelId {
    Tcp,
    Qr,
    Garch,
    Hist,
}

impl ModelId {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Tcp => "tcp",
            ModelId::Qr => "qr",
            ModelId::Garch => "garch",
            ModelId::Hist => "hist",
        }
    }
}

/// One issued interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionInterval {
    pub lower: f64,
    pub upper: f64,
    pub time_index: usize,
    pub model_id: ModelId,
}

impl PredictionInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Boundary points count as covered.
    pub fn covers(&self, r: f64) -> bool {
        r >= self.lower && r <= self.upper
    }
}

/// Multiset of non-conformity scores.
#[derive(Debug, Clone, Default)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Threshold rule: plain empirical quantile or the finite-sample
/// (n + 1) correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMethod {
    Empirical,
    FiniteSample,
}

/// Adaptive threshold state: the online component C plus the
/// learning-rate schedule hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalState {
    #[serde(rename = "C")]
    pub c: f64,
    pub t: u64,
    pub alpha: f64,
    pub gamma0: f64,
    pub lambda: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl ConformalState {
    pub fn new(alpha: f64, gamma0: f64, lambda: f64, beta: f64, kappa: f64) -> Result<Self> {
        let ok = alpha > 0.0
            && alpha < 1.0
            && gamma0 > 0.0
            && lambda > 0.0
            && beta > 0.5
            && beta <= 1.0
            && kappa >= 0.0;
        if !ok {
            return Err(Error::Precondition(format!(
                "invalid conformal state: alpha={alpha} gamma0={gamma0} lambda={lambda} beta={beta} kappa={kappa}"
            )));
        }
        Ok(Self {
            c: 0.0,
            t: 0,
            alpha,
            gamma0,
            lambda,
            beta,
            kappa,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Precondition(format!("bad state JSON: {e}")))
    }
}

/// Pooled signed residual scores from both quantile bounds: for each
/// observation, r - q_lo and q_hi - r.
pub fn nonconformity_scores(returns: &[f64], q_lo: &[f64], q_hi: &[f64]) -> Result<ScoreSet> {
    if returns.len() != q_lo.len() || returns.len() != q_hi.len() {
        return Err(Error::Dimension {
            expected: returns.len(),
            got: q_lo.len().max(q_hi.len()),
        });
    }
    if returns.is_empty() {
        return Err(Error::EmptyInput("nonconformity_scores"));
    }
    let mut scores = Vec::with_capacity(2 * returns.len());
    for i in 0..returns.len() {
        scores.push(returns[i] - q_lo[i]);
        scores.push(q_hi[i] - returns[i]);
    }
    Ok(ScoreSet::new(scores))
}

/// (1 - alpha) score quantile by nearest-rank-above, with or without
/// the finite-sample correction.
pub fn conformal_threshold(s: &ScoreSet, alpha: f64, method: ThresholdMethod) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::EmptyInput("conformal_threshold"));
    }
    let n = s.len();
    let k = match method {
        ThresholdMethod::Empirical => nearest_rank_index(n, 1.0 - alpha),
        ThresholdMethod::FiniteSample => {
            (((1.0 - alpha) * (n + 1) as f64).ceil() as usize).min(n).max(1)
        }
    };
    let mut sorted = s.scores.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[k - 1])
}

/// Expand a quantile band by C on both sides; an inverted result
/// (possible when C < 0) collapses to the midpoint.
pub fn form_interval(
    q_lo: f64,
    q_hi: f64,
    c: f64,
    time_index: usize,
    model_id: ModelId,
) -> (PredictionInterval, bool) {
    let lower = q_lo - c;
    let upper = q_hi + c;
    if lower > upper {
        let mid = 0.5 * (lower + upper);
        (
            PredictionInterval {
                lower: mid,
                upper: mid,
                time_index,
                model_id,
            },
            true,
        )
    } else {
        (
            PredictionInterval {
                lower,
                upper,
                time_index,
                model_id,
            },
            false,
        )
    }
}

/// e_t = 1(miss) - alpha; boundary counts as covered.
pub fn coverage_error(r: f64, iv: &PredictionInterval, alpha: f64) -> f64 {
    if iv.covers(r) {
        -alpha
    } else {
        1.0 - alpha
    }
}

/// gamma_t = gamma0 / (1 + lambda * t)^beta.
pub fn learning_rate(state: &ConformalState) -> f64 {
    state.gamma0 / (1.0 + state.lambda * state.t as f64).powf(state.beta)
}

/// One Robbins-Monro step: C += gamma_t * e_t, with the optional decay
/// heuristic shaving kappa * gamma_t * |C| off after covered steps.
pub fn adaptive_update(state: &ConformalState, r: f64, iv: &PredictionInterval) -> ConformalState {
    let gamma = learning_rate(state);
    let e = coverage_error(r, iv, state.alpha);
    let mut c = state.c + gamma * e;
    if state.kappa > 0.0 && iv.covers(r) {
        c -= state.kappa * gamma * c.abs();
    }
    ConformalState {
        c,
        t: state.t + 1,
        ..*state
    }
}

/// Split-conformal p-value: (1 + #{calibration scores >= test}) / (n + 1).
pub fn conformal_p_value(cal_scores: &ScoreSet, test_score: f64) -> Result<f64> {
    if cal_scores.is_empty() {
        return Err(Error::EmptyInput("conformal_p_value"));
    }
    let count = cal_scores
        .scores
        .iter()
        .filter(|&&s| s >= test_score)
        .count();
    Ok((1 + count) as f64 / (cal_scores.len() + 1) as f64)
}

/// Symmetric split-conformal interval from nonnegative absolute
/// residuals, using the finite-sample threshold.
pub fn split_conformal_interval(
    cal_residuals: &ScoreSet,
    point_pred: f64,
    alpha: f64,
    time_index: usize,
) -> Result<PredictionInterval> {
    let c = conformal_threshold(cal_residuals, alpha, ThresholdMethod::FiniteSample)?;
    Ok(PredictionInterval {
        lower: point_pred - c,
        upper: point_pred + c,
        time_index,
        model_id: ModelId::Tcp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::stats::nearest_rank_quantile;
    use proptest::prelude::*;

    fn iv(lo: f64, hi: f64) -> PredictionInterval {
        PredictionInterval {
            lower: lo,
            upper: hi,
            time_index: 0,
            model_id: ModelId::Tcp,
        }
    }

    fn state(alpha: f64, gamma0: f64, kappa: f64) -> ConformalState {
        ConformalState::new(alpha, gamma0, 0.01, 0.75, kappa).unwrap()
    }

    #[test]
    fn scores_by_substitution() {
        let s = nonconformity_scores(&[0.0], &[-1.0], &[1.0]).unwrap();
        assert_eq!(s.scores, vec![1.0, 1.0]);
        let s = nonconformity_scores(&[2.0], &[-1.0], &[1.0]).unwrap();
        assert_eq!(s.scores, vec![3.0, -1.0]);
    }

    #[test]
    fn inside_band_means_positive_scores() {
        let r = [0.1, -0.3, 0.0];
        let s = nonconformity_scores(&r, &[-1.0; 3], &[1.0; 3]).unwrap();
        assert!(s.scores.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn score_length_mismatch() {
        assert!(nonconformity_scores(&[0.0], &[0.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn threshold_rank_examples() {
        // brute-force rank oracle: ceil(0.95 * 21) = 20
        let s = ScoreSet::new((1..=20).map(|i| i as f64).collect());
        assert_eq!(
            conformal_threshold(&s, 0.05, ThresholdMethod::FiniteSample).unwrap(),
            20.0
        );
        let s = ScoreSet::new(vec![5.0, 5.0, 5.0]);
        assert_eq!(
            conformal_threshold(&s, 0.37, ThresholdMethod::Empirical).unwrap(),
            5.0
        );
        let s = ScoreSet::new(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            conformal_threshold(&s, 0.5, ThresholdMethod::Empirical).unwrap(),
            2.0
        );
        assert!(conformal_threshold(&ScoreSet::default(), 0.1, ThresholdMethod::Empirical).is_err());
    }

    #[test]
    fn interval_formation() {
        let (i, d) = form_interval(-1.0, 1.0, 0.5, 0, ModelId::Tcp);
        assert_eq!((i.lower, i.upper), (-1.5, 1.5));
        assert!(!d);
        let (i, d) = form_interval(-1.0, 1.0, 0.0, 0, ModelId::Tcp);
        assert_eq!((i.lower, i.upper), (-1.0, 1.0));
        assert!(!d);
        let (i, d) = form_interval(-0.1, 0.1, -0.2, 0, ModelId::Tcp);
        assert!(d);
        assert!((i.lower - 0.0).abs() < 1e-15 && i.lower == i.upper);
    }

    #[test]
    fn coverage_error_conventions() {
        let band = iv(-1.0, 1.0);
        assert_eq!(coverage_error(0.5, &band, 0.05), -0.05);
        assert_eq!(coverage_error(2.0, &band, 0.05), 0.95);
        assert_eq!(coverage_error(1.0, &band, 0.05), -0.05); // boundary covered
    }

    #[test]
    fn learning_rate_schedule() {
        let mut st = state(0.05, 0.01, 0.0);
        assert_eq!(learning_rate(&st), 0.01);
        st.t = 100;
        // independent arithmetic oracle: 0.01 / 2^0.75
        assert!((learning_rate(&st) - 0.005_946_0).abs() < 1e-6);
        let g1 = learning_rate(&st);
        st.t = 101;
        assert!(learning_rate(&st) < g1);
    }

    #[test]
    fn update_grows_on_miss_shrinks_on_cover() {
        let st = state(0.05, 0.01, 0.0);
        let band = iv(-1.0, 1.0);
        let missed = adaptive_update(&st, 5.0, &band);
        assert!((missed.c - 0.0095).abs() < 1e-15);
        let covered = adaptive_update(&st, 0.0, &band);
        assert!((covered.c - (-0.0005)).abs() < 1e-15);
        assert_eq!(missed.t, 1);
    }

    #[test]
    fn all_covered_run_is_monotone_decreasing() {
        let mut st = state(0.05, 0.01, 0.0);
        st.c = 1.0;
        let band = iv(-10.0, 10.0);
        let mut expected = st.c;
        for _ in 0..500 {
            let gamma = learning_rate(&st);
            let next = adaptive_update(&st, 0.0, &band);
            expected -= gamma * st.alpha;
            assert!(next.c < st.c);
            assert!((next.c - expected).abs() < 1e-12);
            st = next;
        }
    }

    #[test]
    fn update_bookkeeping_identity_with_kappa() {
        let mut st = state(0.05, 0.02, 0.1);
        let band = iv(-1.5, 1.5);
        let mut rng = CounterRng::new(21);
        let mut acc = 0.0;
        for _ in 0..2000 {
            let r = 2.0 * rng.next_normal();
            let gamma = learning_rate(&st);
            let e = coverage_error(r, &band, st.alpha);
            let next = adaptive_update(&st, r, &band);
            let mut step = gamma * e;
            if band.covers(r) {
                step -= st.kappa * gamma * (st.c + gamma * e).abs();
            }
            acc += step;
            assert!((next.c - (st.c + step)).abs() < 1e-15);
            st = next;
        }
        assert!((st.c - acc).abs() < 1e-12);
    }

    #[test]
    fn p_value_count_oracle() {
        let cal = ScoreSet::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(conformal_p_value(&cal, 2.5).unwrap(), 0.5);
        assert_eq!(conformal_p_value(&cal, 9.0).unwrap(), 0.25);
        assert_eq!(conformal_p_value(&cal, -1.0).unwrap(), 1.0);
        assert!(conformal_p_value(&ScoreSet::default(), 0.0).is_err());
    }

    #[test]
    fn split_interval_rank_examples() {
        let res = ScoreSet::new((1..=19).map(|i| i as f64).collect());
        let iv = split_conformal_interval(&res, 0.0, 0.05, 0).unwrap();
        assert_eq!((iv.lower, iv.upper), (-19.0, 19.0)); // ceil(0.95*20)=19th
        let iv = split_conformal_interval(&res, 2.0, 0.99, 0).unwrap();
        assert_eq!((iv.lower, iv.upper), (1.0, 3.0)); // 1st order statistic
        let zeros = ScoreSet::new(vec![0.0; 10]);
        let iv = split_conformal_interval(&zeros, 1.0, 0.05, 0).unwrap();
        assert_eq!((iv.lower, iv.upper), (1.0, 1.0));
    }

    #[test]
    fn p_values_superuniform_on_exchangeable_data() {
        // empirical CDF of p-values at u never exceeds u + 3 MC standard errors
        let trials = 2000;
        let n_cal = 50;
        let mut pvals = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut rng = CounterRng::with_stream(99, trial as u64);
            let cal: Vec<f64> = (0..n_cal).map(|_| rng.next_normal().abs()).collect();
            let test = rng.next_normal().abs();
            pvals.push(conformal_p_value(&ScoreSet::new(cal), test).unwrap());
        }
        for u in [0.05, 0.1, 0.25, 0.5, 0.75, 0.9] {
            let cdf = pvals.iter().filter(|&&p| p <= u).count() as f64 / trials as f64;
            let se = (u * (1.0 - u) / trials as f64).sqrt();
            assert!(cdf <= u + 3.0 * se, "u={u}: cdf={cdf}");
        }
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut st = state(0.05, 0.01, 0.1);
        st.c = -0.3;
        st.t = 17;
        let back = ConformalState::from_json(&st.to_json()).unwrap();
        assert_eq!(st, back);
    }

    proptest! {
        #[test]
        fn threshold_monotone_as_alpha_decreases(
            scores in proptest::collection::vec(-10.0f64..10.0, 1..80),
            a1 in 0.02f64..0.5,
            da in 0.01f64..0.4
        ) {
            let s = ScoreSet::new(scores);
            for method in [ThresholdMethod::Empirical, ThresholdMethod::FiniteSample] {
                let hi_alpha = conformal_threshold(&s, a1 + da, method).unwrap();
                let lo_alpha = conformal_threshold(&s, a1, method).unwrap();
                prop_assert!(lo_alpha >= hi_alpha);
            }
        }

        #[test]
        fn threshold_matches_sort_oracle(
            scores in proptest::collection::vec(-10.0f64..10.0, 1..60),
            alpha in 0.01f64..0.99
        ) {
            let s = ScoreSet::new(scores.clone());
            let got = conformal_threshold(&s, alpha, ThresholdMethod::Empirical).unwrap();
            prop_assert_eq!(got, nearest_rank_quantile(&scores, 1.0 - alpha));
        }
    }
}
