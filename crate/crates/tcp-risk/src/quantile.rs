//! Gradient-boosted quantile regression under pinball loss.
//!
//! Each boosting stage grows a small axis-aligned tree; split points are
//! scored by the exact reduction in pinball loss (children valued at the
//! empirical tau-quantile of their residuals), and leaf values are those
//! residual quantiles. A Fenwick tree over residual ranks keeps the
//! split scan at O(n log n) per feature.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, FeatureRow, N_FEATURES};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::stats::nearest_rank_quantile;

/// Quantile level, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Precondition(format!("tau {tau} not in (0,1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Boosting hyperparameters. Defaults are sized for 252-row rolling
/// windows of daily returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            shrinkage: 0.1,
            min_leaf: 20,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.max_depth >= 1
            && self.shrinkage > 0.0
            && self.shrinkage <= 1.0
            && self.min_leaf >= 1
            && self.subsample > 0.0
            && self.subsample <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid GBT config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    /// Raw leaf value along the root-to-leaf path (unscaled).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// A fitted boosted quantile model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedQuantileModel {
    pub tau: QuantileLevel,
    pub base_value: f64,
    pub shrinkage: f64,
    pub n_features: usize,
    pub trees: Vec<Tree>,
}

impl FittedQuantileModel {
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut out = self.base_value;
        for tree in &self.trees {
            out += self.shrinkage * tree.predict(x);
        }
        Ok(out)
    }

    /// Debug dump; not a stability-guaranteed format.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model is serializable")
    }
}

/// Check (pinball) loss: tau * (y - q) above the quantile, (1 - tau) *
/// (q - y) below.
pub fn pinball_loss(y: f64, q: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if y >= q {
        t * (y - q)
    } else {
        (1.0 - t) * (q - y)
    }
}

/// Negative gradient of the pinball loss with respect to the prediction:
/// tau where the residual y - q is positive (ties included), tau - 1
/// where it is negative.
pub fn pinball_subgradient(y: f64, q: f64, tau: QuantileLevel) -> f64 {
    let t = tau.value();
    if y - q >= 0.0 {
        t
    } else {
        t - 1.0
    }
}

/// Fit a boosted quantile model on a feature matrix.
pub fn fit_quantile_gbt(
    x: &FeatureMatrix,
    tau: QuantileLevel,
    cfg: &GbtConfig,
) -> Result<FittedQuantileModel> {
    let features: Vec<Vec<f64>> = x.rows.iter().map(|r| r.to_vec().to_vec()).collect();
    fit_quantile_gbt_raw(&features, &x.targets, tau, cfg)
}

/// Fit on raw feature rows (every row must share the same arity).
pub fn fit_quantile_gbt_raw(
    features: &[Vec<f64>],
    targets: &[f64],
    tau: QuantileLevel,
    cfg: &GbtConfig,
) -> Result<FittedQuantileModel> {
    cfg.validate()?;
    let n = targets.len();
    if features.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: features.len(),
        });
    }
    if n < 2 * cfg.min_leaf {
        return Err(Error::InsufficientData(format!(
            "need at least {} rows (2 * min_leaf), got {n}",
            2 * cfg.min_leaf
        )));
    }
    let n_features = features.first().map_or(0, Vec::len);

    let base_value = nearest_rank_quantile(targets, tau.value());
    let mut preds = vec![base_value; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);

    for stage in 0..cfg.n_trees {
        let rows = sample_rows(n, cfg, stage as u64);
        let residuals: Vec<f64> = (0..n).map(|i| targets[i] - preds[i]).collect();
        let tree = grow_tree(features, &residuals, rows, tau.value(), cfg);
        for i in 0..n {
            preds[i] += cfg.shrinkage * tree.predict(&features[i]);
        }
        trees.push(tree);
    }

    Ok(FittedQuantileModel {
        tau,
        base_value,
        shrinkage: cfg.shrinkage,
        n_features,
        trees,
    })
}

/// Fit lower and upper models at levels alpha/2 and 1 - alpha/2 on the
/// same rows and seed.
pub fn fit_quantile_pair(
    x: &FeatureMatrix,
    alpha: f64,
    cfg: &GbtConfig,
) -> Result<(FittedQuantileModel, FittedQuantileModel)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Precondition(format!("alpha {alpha} not in (0,1)")));
    }
    let lo = QuantileLevel::new(alpha / 2.0)?;
    let hi = QuantileLevel::new(1.0 - alpha / 2.0)?;
    let features: Vec<Vec<f64>> = x.rows.iter().map(|r| r.to_vec().to_vec()).collect();
    let (lower, upper) = rayon::join(
        || fit_quantile_gbt_raw(&features, &x.targets, lo, cfg),
        || fit_quantile_gbt_raw(&features, &x.targets, hi, cfg),
    );
    Ok((lower?, upper?))
}

/// Convenience wrapper with the spec's feature-row arity check.
pub fn predict_quantile(m: &FittedQuantileModel, row: &FeatureRow) -> Result<f64> {
    if m.n_features != N_FEATURES {
        return Err(Error::Dimension {
            expected: m.n_features,
            got: N_FEATURES,
        });
    }
    m.predict(&row.to_vec())
}

/// Predict an ordered (lower, upper) pair, swapping on quantile
/// crossing; returns whether a swap happened.
pub fn predict_ordered_pair(
    lower: &FittedQuantileModel,
    upper: &FittedQuantileModel,
    x: &[f64],
) -> Result<(f64, f64, bool)> {
    let lo = lower.predict(x)?;
    let hi = upper.predict(x)?;
    if lo > hi {
        Ok((hi, lo, true))
    } else {
        Ok((lo, hi, false))
    }
}

fn sample_rows(n: usize, cfg: &GbtConfig, stage: u64) -> Vec<usize> {
    if cfg.subsample >= 1.0 {
        return (0..n).collect();
    }
    let take = ((cfg.subsample * n as f64).floor() as usize).max(1);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = CounterRng::with_stream(cfg.seed, stage);
    for i in 0..take {
        let j = i + rng.next_below(n - i);
        idx.swap(i, j);
    }
    let mut out = idx[..take].to_vec();
    out.sort_unstable();
    out
}

// --- tree growing ---------------------------------------------------

struct Fenwick {
    cnt: Vec<u32>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            cnt: vec![0; n + 1],
            sum: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, rank: usize, c: i32, v: f64) {
        let mut i = rank + 1;
        while i < self.cnt.len() {
            self.cnt[i] = (self.cnt[i] as i64 + c as i64) as u32;
            self.sum[i] += v;
            i += i & i.wrapping_neg();
        }
    }

    /// (count, sum) over ranks 0..=rank.
    fn prefix(&self, rank: usize) -> (u32, f64) {
        let (mut c, mut s) = (0u32, 0.0);
        let mut i = rank + 1;
        while i > 0 {
            c += self.cnt[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }

    /// Rank holding the k-th present element (1-based k).
    fn select(&self, mut k: u32) -> usize {
        let mut pos = 0usize;
        let mut log = self.cnt.len().next_power_of_two() >> 1;
        while log > 0 {
            let next = pos + log;
            if next < self.cnt.len() && self.cnt[next] < k {
                k -= self.cnt[next];
                pos = next;
            }
            log >>= 1;
        }
        pos // 0-based rank
    }
}

struct NodeSet<'a> {
    /// Residual value per rank, sorted ascending with row-index ties.
    vals: &'a [f64],
}

impl NodeSet<'_> {
    /// Exact pinball loss of a member set valued at its tau-quantile.
    fn loss(&self, fen: &Fenwick, m: u32, total_sum: f64, tau: f64) -> f64 {
        if m == 0 {
            return 0.0;
        }
        let k = ((tau * m as f64).ceil() as u32).clamp(1, m);
        let rank = fen.select(k);
        let q = self.vals[rank];
        let (_, s_lo) = fen.prefix(rank);
        let kf = k as f64;
        (1.0 - tau) * (kf * q - s_lo) + tau * ((total_sum - s_lo) - (m - k) as f64 * q)
    }
}

fn grow_tree(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: Vec<usize>,
    tau: f64,
    cfg: &GbtConfig,
) -> Tree {
    let mut nodes = Vec::new();
    grow_node(features, residuals, rows, tau, cfg, 0, &mut nodes);
    Tree { nodes }
}

fn leaf_value(residuals: &[f64], rows: &[usize], tau: f64) -> f64 {
    let vals: Vec<f64> = rows.iter().map(|&i| residuals[i]).collect();
    nearest_rank_quantile(&vals, tau)
}

fn grow_node(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: Vec<usize>,
    tau: f64,
    cfg: &GbtConfig,
    depth: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let idx = nodes.len();
    if depth >= cfg.max_depth || rows.len() < 2 * cfg.min_leaf {
        nodes.push(Node::Leaf {
            value: leaf_value(residuals, &rows, tau),
        });
        return idx;
    }

    match best_split(features, residuals, &rows, tau, cfg.min_leaf) {
        None => {
            nodes.push(Node::Leaf {
                value: leaf_value(residuals, &rows, tau),
            });
            idx
        }
        Some((feature, threshold)) => {
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&i| features[i][feature] <= threshold);
            nodes.push(Node::Split {
                feature,
                threshold,
                left: 0,
                right: 0,
            });
            let left = grow_node(features, residuals, left_rows, tau, cfg, depth + 1, nodes);
            let right = grow_node(features, residuals, right_rows, tau, cfg, depth + 1, nodes);
            if let Node::Split {
                left: l, right: r, ..
            } = &mut nodes[idx]
            {
                *l = left;
                *r = right;
            }
            idx
        }
    }
}

fn best_split(
    features: &[Vec<f64>],
    residuals: &[f64],
    rows: &[usize],
    tau: f64,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let m = rows.len();
    let n_features = features[rows[0]].len();

    // Rank residuals within the node (ties broken by row index so the
    // mapping row -> rank is a bijection).
    let mut by_resid: Vec<usize> = rows.to_vec();
    by_resid.sort_by(|&a, &b| residuals[a].total_cmp(&residuals[b]).then(a.cmp(&b)));
    let vals: Vec<f64> = by_resid.iter().map(|&i| residuals[i]).collect();
    let mut rank_of = std::collections::HashMap::with_capacity(m);
    for (rank, &row) in by_resid.iter().enumerate() {
        rank_of.insert(row, rank);
    }
    let total_sum: f64 = vals.iter().sum();
    let set = NodeSet { vals: &vals };

    // Loss if this node stays a leaf.
    let mut full = Fenwick::new(m);
    for rank in 0..m {
        full.add(rank, 1, vals[rank]);
    }
    let parent_loss = set.loss(&full, m as u32, total_sum, tau);

    let mut best: Option<(f64, usize, f64)> = None; // (loss, feature, threshold)

    for f in 0..n_features {
        let mut by_feat: Vec<usize> = rows.to_vec();
        by_feat.sort_by(|&a, &b| features[a][f].total_cmp(&features[b][f]).then(a.cmp(&b)));
        if features[by_feat[0]][f] == features[by_feat[m - 1]][f] {
            continue; // constant feature in this node
        }
        let mut left = Fenwick::new(m);
        let mut right = Fenwick::new(m);
        for rank in 0..m {
            right.add(rank, 1, vals[rank]);
        }
        let mut left_sum = 0.0;

        for (i, &row) in by_feat.iter().enumerate() {
            let rank = rank_of[&row];
            let v = vals[rank];
            left.add(rank, 1, v);
            right.add(rank, -1, -v);
            left_sum += v;
            let n_left = i + 1;
            let n_right = m - n_left;
            if n_right == 0 {
                break;
            }
            if features[by_feat[i + 1]][f] == features[row][f] {
                continue; // not a boundary between distinct values
            }
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let loss = set.loss(&left, n_left as u32, left_sum, tau)
                + set.loss(&right, n_right as u32, total_sum - left_sum, tau);
            if loss < parent_loss - 1e-12 && best.as_ref().map_or(true, |b| loss < b.0) {
                let threshold = 0.5 * (features[row][f] + features[by_feat[i + 1]][f]);
                best = Some((loss, f, threshold));
            }
        }
    }

    best.map(|(_, f, thr)| (f, thr))
}
