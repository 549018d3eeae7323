//! Sequential backtests for TCP and the benchmark models, aggregate
//! metrics, and the hyperparameter sensitivity sweep.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::{fit_garch, garch_interval, garch_recursion, static_qr_predict, HistWindow};
use crate::conformal::{
    adaptive_update, conformal_threshold, form_interval, learning_rate, nonconformity_scores,
    ConformalState, ModelId, PredictionInterval, ThresholdMethod,
};
use crate::data::{build_features, FeatureMatrix, ReturnSeries, FEATURE_WARMUP};
use crate::error::{Error, Result};
use crate::quantile::{fit_quantile_pair, predict_ordered_pair, GbtConfig};

/// How Algorithm-style window thresholds and the online state combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// C_t = window quantile + online state (state starts at 0).
    #[default]
    Additive,
    /// C_t = online state only.
    OnlineOnly,
    /// C_t = window quantile only; the online state is not consulted.
    WindowOnly,
}

/// Training protocol for the static QR benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QrMode {
    /// Fit once on the entire dataset. This deliberately leaks future
    /// data; it reproduces the benchmark protocol being compared
    /// against.
    #[default]
    Paper,
    /// Fit on the first 30% of rows only, predict on the rest.
    Causal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub model_id: ModelId,
    pub alpha: f64,
    pub window: usize,
    pub gamma0: f64,
    pub lambda: f64,
    pub beta: f64,
    pub kappa: f64,
    pub refit_every: usize,
    pub gbt: GbtConfig,
    pub qr_mode: QrMode,
    pub threshold_mode: ThresholdMode,
    /// Quantile rule inside the TCP loop (the split-conformal validator
    /// always uses the finite-sample rule).
    pub threshold_method: ThresholdMethod,
    /// Refit GARCH parameters every this many steps; None fits once.
    pub garch_refit_every: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            model_id: ModelId::Tcp,
            alpha: 0.05,
            window: 252,
            gamma0: 0.01,
            lambda: 0.01,
            beta: 0.75,
            kappa: 0.0,
            refit_every: 1,
            gbt: GbtConfig::default(),
            qr_mode: QrMode::Paper,
            threshold_mode: ThresholdMode::Additive,
            threshold_method: ThresholdMethod::Empirical,
            garch_refit_every: None,
        }
    }
}

/// One issued interval plus its outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestRecord {
    pub time_index: usize,
    pub r: f64,
    pub interval: PredictionInterval,
    pub covered: bool,
    pub c_at_issue: Option<f64>,
    pub gamma_at_issue: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub model_id: ModelId,
    pub records: Vec<BacktestRecord>,
    pub empirical_coverage: f64,
    pub avg_width: f64,
    pub n_predictions: usize,
    pub degenerate_count: usize,
    pub crossing_count: usize,
}

/// Mean of the covered flags.
pub fn empirical_coverage(records: &[BacktestRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("empirical_coverage"));
    }
    Ok(records.iter().filter(|r| r.covered).count() as f64 / records.len() as f64)
}

/// Mean interval width.
pub fn avg_interval_width(records: &[BacktestRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("avg_interval_width"));
    }
    Ok(records.iter().map(|r| r.interval.width()).sum::<f64>() / records.len() as f64)
}

fn assemble(
    model_id: ModelId,
    records: Vec<BacktestRecord>,
    degenerate_count: usize,
    crossing_count: usize,
) -> Result<BacktestReport> {
    let empirical_coverage = empirical_coverage(&records)?;
    let avg_width = avg_interval_width(&records)?;
    Ok(BacktestReport {
        model_id,
        n_predictions: records.len(),
        empirical_coverage,
        avg_width,
        degenerate_count,
        crossing_count,
        records,
    })
}

/// First prediction index for TCP: feature history plus one full
/// calibration window.
pub fn tcp_warmup(window: usize) -> usize {
    window + FEATURE_WARMUP + 1
}

/// Run the TCP loop: refit the quantile pair on the trailing window,
/// recompute the score quantile over the trailing window of one-step-ahead
/// predictions, compose it with the online state, issue the interval for
/// time t before observing r_t, then apply the Robbins-Monro update.
pub fn run_tcp(series: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    let first = tcp_warmup(cfg.window);
    if series.len() <= first {
        return Err(Error::InsufficientData(format!(
            "TCP needs more than {} returns, got {}",
            first,
            series.len()
        )));
    }
    if cfg.refit_every == 0 {
        return Err(Error::Precondition("refit_every must be >= 1".into()));
    }
    let features = build_features(series)?;
    let mut state = ConformalState::new(cfg.alpha, cfg.gamma0, cfg.lambda, cfg.beta, cfg.kappa)?;

    let mut records = Vec::with_capacity(series.len() - first);
    let mut degenerate_count = 0;
    let mut crossing_count = 0;
    let mut pair = None;

    // Rolling calibration buffers: the last `window` returns together with
    // the raw quantile band that was issued for each of them one step
    // ahead. Scoring realized returns against previously issued bands keeps
    // the calibration out-of-sample; scoring the training window with the
    // freshly fitted models would reuse the rows the models memorized and
    // systematically underestimate the threshold.
    let mut past_r: VecDeque<f64> = VecDeque::with_capacity(cfg.window);
    let mut past_lo: VecDeque<f64> = VecDeque::with_capacity(cfg.window);
    let mut past_hi: VecDeque<f64> = VecDeque::with_capacity(cfg.window);

    for t in first..series.len() {
        if (t - first) % cfg.refit_every == 0 || pair.is_none() {
            let window_matrix = trailing_window(&features, t, cfg.window)?;
            pair = Some(
                fit_quantile_pair(&window_matrix, cfg.alpha, &cfg.gbt)
                    .map_err(|e| Error::ModelStep {
                        step: t,
                        source: Box::new(e),
                    })?,
            );
        }
        let (lower_model, upper_model) = pair.as_ref().unwrap();

        // The pooled scores are inside-the-band margins (larger = better
        // fit). A point is covered by [q_lo - C, q_hi + C] exactly when
        // both of its margins are >= -C, so the calibration score per
        // point is the worst-side deficit -min(margin_lo, margin_hi); its
        // (1-alpha) quantile is the smallest C that would have covered
        // (1-alpha) of the scored window.
        let c_window = if past_r.is_empty() {
            0.0
        } else {
            let rs: Vec<f64> = past_r.iter().copied().collect();
            let q_lo: Vec<f64> = past_lo.iter().copied().collect();
            let q_hi: Vec<f64> = past_hi.iter().copied().collect();
            let scores = nonconformity_scores(&rs, &q_lo, &q_hi)?;
            let deficits = crate::conformal::ScoreSet::new(
                (0..rs.len())
                    .map(|i| -scores.scores[2 * i].min(scores.scores[2 * i + 1]))
                    .collect(),
            );
            conformal_threshold(&deficits, cfg.alpha, cfg.threshold_method)?
        };

        let c_total = match cfg.threshold_mode {
            ThresholdMode::Additive => c_window + state.c,
            ThresholdMode::OnlineOnly => state.c,
            ThresholdMode::WindowOnly => c_window,
        };

        let row = features.row_at(t).expect("prediction row exists");
        let (p_lo, p_hi, crossed) = predict_ordered_pair(lower_model, upper_model, &row.to_vec())?;
        if crossed {
            crossing_count += 1;
        }
        let (interval, degenerate) = form_interval(p_lo, p_hi, c_total, t, ModelId::Tcp);
        if degenerate {
            degenerate_count += 1;
        }

        let r = series.returns[t];
        let gamma = learning_rate(&state);
        records.push(BacktestRecord {
            time_index: t,
            r,
            covered: interval.covers(r),
            c_at_issue: Some(c_total),
            gamma_at_issue: Some(gamma),
            interval,
        });
        state = adaptive_update(&state, r, &interval);

        past_r.push_back(r);
        past_lo.push_back(p_lo);
        past_hi.push_back(p_hi);
        if past_r.len() > cfg.window {
            past_r.pop_front();
            past_lo.pop_front();
            past_hi.pop_front();
        }
    }

    assemble(ModelId::Tcp, records, degenerate_count, crossing_count)
}

fn trailing_window(features: &FeatureMatrix, t: usize, window: usize) -> Result<FeatureMatrix> {
    let lo = t - window;
    let lo_row = lo.checked_sub(features.start_index).ok_or_else(|| {
        Error::InsufficientData(format!("window at t={t} reaches before feature history"))
    })?;
    let hi_row = t - features.start_index;
    Ok(FeatureMatrix {
        rows: features.rows[lo_row..hi_row].to_vec(),
        targets: features.targets[lo_row..hi_row].to_vec(),
        start_index: lo,
    })
}

/// Run one of the benchmark models sequentially over the series.
pub fn run_benchmark(series: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    match cfg.model_id {
        ModelId::Tcp => run_tcp(series, cfg),
        ModelId::Garch => run_garch(series, cfg),
        ModelId::Hist => run_hist(series, cfg),
        ModelId::Qr => run_qr(series, cfg),
    }
}

fn run_garch(series: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    let warmup = cfg.window.max(100) + FEATURE_WARMUP;
    if series.len() <= warmup {
        return Err(Error::InsufficientData(format!(
            "GARCH backtest needs more than {warmup} returns, got {}",
            series.len()
        )));
    }
    let fit_window = ReturnSeries {
        timestamps: series.timestamps[..warmup].to_vec(),
        returns: series.returns[..warmup].to_vec(),
        unit: series.unit,
    };
    let mut fit = fit_garch(&fit_window).map_err(|e| Error::ModelStep {
        step: warmup,
        source: Box::new(e),
    })?;

    // Variance recursion from the start of the series, seeded with the
    // sample variance of the fit window.
    let seed_var = {
        let n = warmup as f64;
        let mean = fit_window.returns.iter().sum::<f64>() / n;
        (fit_window
            .returns
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n)
            .max(1e-12)
    };
    let mut var = seed_var;
    for t in 1..warmup {
        var = garch_recursion(&fit.params(), series.returns[t - 1], var);
    }

    let mut records = Vec::with_capacity(series.len() - warmup);
    for t in warmup..series.len() {
        if let Some(every) = cfg.garch_refit_every {
            if every > 0 && (t - warmup) % every == 0 && t > warmup {
                let lo = t.saturating_sub(warmup);
                let refit_window = ReturnSeries {
                    timestamps: series.timestamps[lo..t].to_vec(),
                    returns: series.returns[lo..t].to_vec(),
                    unit: series.unit,
                };
                fit = fit_garch(&refit_window).map_err(|e| Error::ModelStep {
                    step: t,
                    source: Box::new(e),
                })?;
            }
        }
        var = garch_recursion(&fit.params(), series.returns[t - 1], var);
        let interval = garch_interval(var, cfg.alpha, t);
        let r = series.returns[t];
        records.push(BacktestRecord {
            time_index: t,
            r,
            covered: interval.covers(r),
            c_at_issue: None,
            gamma_at_issue: None,
            interval,
        });
    }
    assemble(ModelId::Garch, records, 0, 0)
}

fn run_hist(series: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    if series.len() <= cfg.window {
        return Err(Error::InsufficientData(format!(
            "historical simulation needs more than {} returns, got {}",
            cfg.window,
            series.len()
        )));
    }
    let mut h = HistWindow::new(cfg.window);
    let mut records = Vec::new();
    for t in 0..series.len() {
        if let Some(interval) = h.interval(cfg.alpha, t) {
            let r = series.returns[t];
            records.push(BacktestRecord {
                time_index: t,
                r,
                covered: interval.covers(r),
                c_at_issue: None,
                gamma_at_issue: None,
                interval,
            });
        }
        h.push(series.returns[t]);
    }
    assemble(ModelId::Hist, records, 0, 0)
}

fn run_qr(series: &ReturnSeries, cfg: &BacktestConfig) -> Result<BacktestReport> {
    let features = build_features(series)?;
    let (train, first_pred) = match cfg.qr_mode {
        QrMode::Paper => (features.clone(), features.start_index),
        QrMode::Causal => {
            let train_end = ((series.len() as f64 * 0.3).floor() as usize)
                .max(features.start_index + 2 * cfg.gbt.min_leaf);
            if train_end >= series.len() {
                return Err(Error::InsufficientData(
                    "causal QR training span leaves no prediction span".into(),
                ));
            }
            let n_rows = train_end - features.start_index;
            (
                FeatureMatrix {
                    rows: features.rows[..n_rows].to_vec(),
                    targets: features.targets[..n_rows].to_vec(),
                    start_index: features.start_index,
                },
                train_end,
            )
        }
    };
    let (lower, upper) = fit_quantile_pair(&train, cfg.alpha, &cfg.gbt)?;

    let mut records = Vec::new();
    let mut crossing_count = 0;
    for t in first_pred..series.len() {
        let row = features.row_at(t).expect("row exists");
        let (interval, crossed) = static_qr_predict((&lower, &upper), row, t)?;
        if crossed {
            crossing_count += 1;
        }
        let r = series.returns[t];
        records.push(BacktestRecord {
            time_index: t,
            r,
            covered: interval.covers(r),
            c_at_issue: None,
            gamma_at_issue: None,
            interval,
        });
    }
    assemble(ModelId::Qr, records, 0, crossing_count)
}

/// One sweep cell: hyperparameters plus outcome (or the error text).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub window: usize,
    pub gamma0: f64,
    pub coverage: Option<f64>,
    pub width: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

/// Run one full TCP backtest per (window, gamma0) grid cell, in
/// parallel; cell failures are recorded, not fatal.
pub fn sensitivity_sweep(
    series: &ReturnSeries,
    windows: &[usize],
    gamma0s: &[f64],
    base: &BacktestConfig,
    master_seed: u64,
) -> SweepResult {
    let grid: Vec<(usize, f64)> = windows
        .iter()
        .flat_map(|&w| gamma0s.iter().map(move |&g| (w, g)))
        .collect();

    let cells = grid
        .par_iter()
        .enumerate()
        .map(|(cell_idx, &(window, gamma0))| {
            let mut cfg = base.clone();
            cfg.window = window;
            cfg.gamma0 = gamma0;
            cfg.gbt.seed = master_seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(cell_idx as u64);
            match run_tcp(series, &cfg) {
                Ok(report) => SweepCell {
                    window,
                    gamma0,
                    coverage: Some(report.empirical_coverage),
                    width: Some(report.avg_width),
                    error: None,
                },
                Err(e) => SweepCell {
                    window,
                    gamma0,
                    coverage: None,
                    width: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    SweepResult { cells }
}

/// Records CSV in the plot-ready layout `t,date,r,lower,upper,covered,C,gamma`.
pub fn write_records_csv<W: std::io::Write>(
    report: &BacktestReport,
    series: &ReturnSeries,
    mut w: W,
) -> Result<()> {
    writeln!(w, "t,date,r,lower,upper,covered,C,gamma")?;
    for rec in &report.records {
        let date = series
            .timestamps
            .get(rec.time_index)
            .map(|d| d.to_string())
            .unwrap_or_default();
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{},{},{}",
            rec.time_index,
            date,
            rec.r,
            rec.interval.lower,
            rec.interval.upper,
            rec.covered as u8,
            rec.c_at_issue.map_or(String::new(), |c| format!("{c:.6}")),
            rec.gamma_at_issue.map_or(String::new(), |g| format!("{g:.6}")),
        )?;
    }
    Ok(())
}

/// Sweep CSV matching the sensitivity-table layout `w,gamma0,coverage,width`.
pub fn write_sweep_csv<W: std::io::Write>(result: &SweepResult, mut w: W) -> Result<()> {
    writeln!(w, "w,gamma0,coverage,width")?;
    for cell in &result.cells {
        match (&cell.coverage, &cell.width) {
            (Some(c), Some(wd)) => {
                writeln!(w, "{},{:.4},{:.4},{:.4}", cell.window, cell.gamma0, c, wd)?
            }
            _ => writeln!(
                w,
                "{},{:.4},error,error",
                cell.window, cell.gamma0
            )?,
        }
    }
    Ok(())
}
