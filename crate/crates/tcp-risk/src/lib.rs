//! Adaptively calibrated prediction intervals for daily return series.
//!
//! The core loop pairs a gradient-boosted quantile forecaster with a
//! rolling conformal threshold and an online Robbins-Monro correction,
//! benchmarked against GARCH(1,1), historical simulation, and a static
//! quantile-regression band. A backtest harness, a hyperparameter
//! sweep, and simulation validators for the two coverage guarantees sit
//! on top.

pub mod backtest;
pub mod benchmarks;
pub mod conformal;
pub mod data;
pub mod error;
pub mod manifest;
pub mod quantile;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod validate;

pub use backtest::{
    run_benchmark, run_tcp, sensitivity_sweep, BacktestConfig, BacktestReport, QrMode,
    SweepResult, ThresholdMode,
};
pub use conformal::{ConformalState, ModelId, PredictionInterval, ThresholdMethod};
pub use data::{build_features, load_prices, log_returns, ReturnSeries, ReturnUnit};
pub use error::{Error, Result};
