//! Price ingestion, log-returns, and feature construction.
//!
//! Returns are stored in percent units by default (natural log return
//! times 100) so that interval widths come out on the same scale as
//! typical daily-return reports; `ReturnUnit::Raw` switches this off.

use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of lagged returns in a feature row.
pub const N_LAGS: usize = 5;
/// Rolling-volatility window length in days.
pub const VOL_WINDOW: usize = 20;
/// First return index with full feature history (5 lags + 20-day window).
pub const FEATURE_WARMUP: usize = N_LAGS + VOL_WINDOW;
/// Total feature arity: 5 lags, rolling vol, squared lag, sign of lag.
pub const N_FEATURES: usize = N_LAGS + 3;

/// Unit convention for stored returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReturnUnit {
    /// Log returns scaled by 100.
    #[default]
    Percent,
    /// Raw log returns.
    Raw,
}

/// A dated positive price series.
#[derive(Debug, Clone)]
pub struct PriceSeries {
    pub timestamps: Vec<NaiveDate>,
    pub prices: Vec<f64>,
}

/// One rejected CSV row: line number plus reason, reported, not fatal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub line: usize,
    pub reason: String,
}

impl PriceSeries {
    pub fn new(timestamps: Vec<NaiveDate>, prices: Vec<f64>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::Dimension {
                expected: timestamps.len(),
                got: prices.len(),
            });
        }
        if prices.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "price series needs at least 2 rows, got {}",
                prices.len()
            )));
        }
        for w in timestamps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::DuplicateTimestamp {
                    line: 0,
                    date: w[1].to_string(),
                });
            }
        }
        if let Some(p) = prices.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::Precondition(format!("non-positive price {p}")));
        }
        Ok(Self { timestamps, prices })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }
}

/// Dated return series; one fewer observation than the source prices.
#[derive(Debug, Clone)]
pub struct ReturnSeries {
    pub timestamps: Vec<NaiveDate>,
    pub returns: Vec<f64>,
    pub unit: ReturnUnit,
}

impl ReturnSeries {
    /// Wrap raw values with synthetic consecutive dates (used by the
    /// simulators, where calendar structure carries no information).
    pub fn from_values(returns: Vec<f64>, unit: ReturnUnit) -> Self {
        let base = NaiveDate::from_ymd_opt(2000, 1, 3).unwrap();
        let timestamps = (0..returns.len())
            .map(|i| base + chrono::Days::new(i as u64 + 1))
            .collect();
        Self {
            timestamps,
            returns,
            unit,
        }
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

/// One feature row, aligned so that the row at time t describes only
/// information available strictly before t.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    /// r_{t-1} .. r_{t-5}.
    pub lags: [f64; N_LAGS],
    /// 20-day rolling standard deviation ending at t-1.
    pub rolling_vol: f64,
    /// Squared previous return.
    pub sq_lag: f64,
    /// Sign of the previous return, in {-1, 0, 1}.
    pub sign_lag: f64,
}

impl FeatureRow {
    pub fn to_vec(&self) -> [f64; N_FEATURES] {
        [
            self.lags[0],
            self.lags[1],
            self.lags[2],
            self.lags[3],
            self.lags[4],
            self.rolling_vol,
            self.sq_lag,
            self.sign_lag,
        ]
    }
}

/// Feature rows plus aligned targets; `start_index` is the return index
/// of the first row.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
    pub targets: Vec<f64>,
    pub start_index: usize,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row whose target is the return at absolute index `t`.
    pub fn row_at(&self, t: usize) -> Option<&FeatureRow> {
        t.checked_sub(self.start_index).and_then(|i| self.rows.get(i))
    }
}

/// Parse a two-column `date,price` CSV. Rows with missing or
/// non-positive prices are collected in the rejection list; malformed
/// dates and out-of-order timestamps are fatal.
pub fn load_prices<R: Read>(reader: R) -> Result<(PriceSeries, Vec<Rejection>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let mut timestamps = Vec::new();
    let mut prices = Vec::new();
    let mut rejections = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = record.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if record.len() < 2 {
            rejections.push(Rejection {
                line,
                reason: "missing price column".into(),
            });
            continue;
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|e| {
            Error::Parse {
                line,
                msg: format!("bad date {:?}: {e}", &record[0]),
            }
        })?;
        let raw = record[1].trim();
        if raw.is_empty() {
            rejections.push(Rejection {
                line,
                reason: "missing price".into(),
            });
            continue;
        }
        let price: f64 = raw.parse().map_err(|e| Error::Parse {
            line,
            msg: format!("bad price {raw:?}: {e}"),
        })?;
        if !(price > 0.0 && price.is_finite()) {
            rejections.push(Rejection {
                line,
                reason: format!("non-positive price {price}"),
            });
            continue;
        }
        if let Some(&prev) = timestamps.last() {
            if date <= prev {
                return Err(Error::DuplicateTimestamp {
                    line,
                    date: date.to_string(),
                });
            }
        }
        timestamps.push(date);
        prices.push(price);
    }

    if prices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 valid price rows, got {}",
            prices.len()
        )));
    }
    Ok((PriceSeries { timestamps, prices }, rejections))
}

/// Log-returns between consecutive prices, in the requested unit.
pub fn log_returns(p: &PriceSeries, unit: ReturnUnit) -> Result<ReturnSeries> {
    if p.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least 2 prices for returns".into(),
        ));
    }
    let scale = match unit {
        ReturnUnit::Percent => 100.0,
        ReturnUnit::Raw => 1.0,
    };
    let returns = p
        .prices
        .windows(2)
        .map(|w| scale * (w[1] / w[0]).ln())
        .collect();
    Ok(ReturnSeries {
        timestamps: p.timestamps[1..].to_vec(),
        returns,
        unit,
    })
}

/// Rolling standard deviation with the population divisor: the value at
/// output position j corresponds to time t = window + j and uses the
/// `window` returns strictly before t.
pub fn rolling_volatility(r: &ReturnSeries, window: usize) -> Result<Vec<f64>> {
    assert!(window > 0);
    if r.len() < window {
        return Err(Error::InsufficientData(format!(
            "series of length {} shorter than window {window}",
            r.len()
        )));
    }
    let mut out = Vec::with_capacity(r.len() - window);
    for t in window..r.len() {
        out.push(window_std(&r.returns[t - window..t]));
    }
    Ok(out)
}

fn window_std(w: &[f64]) -> f64 {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.max(0.0).sqrt()
}

/// Build the feature matrix: one row per time index t >= 25, each row
/// predicting the return at its own index from strictly earlier data.
pub fn build_features(r: &ReturnSeries) -> Result<FeatureMatrix> {
    if r.len() < FEATURE_WARMUP + 1 {
        return Err(Error::InsufficientData(format!(
            "need at least {} returns for features, got {}",
            FEATURE_WARMUP + 1,
            r.len()
        )));
    }
    let mut rows = Vec::with_capacity(r.len() - FEATURE_WARMUP);
    let mut targets = Vec::with_capacity(rows.capacity());
    for t in FEATURE_WARMUP..r.len() {
        let mut lags = [0.0; N_LAGS];
        for (k, lag) in lags.iter_mut().enumerate() {
            *lag = r.returns[t - 1 - k];
        }
        let rolling_vol = window_std(&r.returns[t - VOL_WINDOW..t]);
        rows.push(FeatureRow {
            lags,
            rolling_vol,
            sq_lag: lags[0] * lags[0],
            sign_lag: if lags[0] > 0.0 {
                1.0
            } else if lags[0] < 0.0 {
                -1.0
            } else {
                0.0
            },
        });
        targets.push(r.returns[t]);
    }
    Ok(FeatureMatrix {
        rows,
        targets,
        start_index: FEATURE_WARMUP,
    })
}
