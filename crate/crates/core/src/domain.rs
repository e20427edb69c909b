//! Core data types shared by every stage of the pipeline.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Tolerance for stochastic rows (policy rows, logging distributions).
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn column_mean(&self, c: usize) -> f64 {
        (0..self.rows).map(|r| self.get(r, c)).sum::<f64>() / self.rows as f64
    }
}

/// One exposure event in a log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedInteraction {
    pub user: usize,
    pub item: usize,
    /// Binary click indicator (0 or 1).
    pub reward: u8,
    /// Probability that the logging policy exposed `item` to `user`.
    pub propensity: f64,
}

impl LoggedInteraction {
    pub fn new(user: usize, item: usize, reward: u8, propensity: f64) -> Self {
        Self {
            user,
            item,
            reward,
            propensity,
        }
    }

    #[inline]
    pub fn clicked(&self) -> bool {
        self.reward == 1
    }
}

/// Where a log came from and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "source", content = "params", rename_all = "snake_case")]
pub enum Provenance {
    Synthetic(serde_json::Value),
    MovieLens(serde_json::Value),
    #[default]
    Unknown,
}

/// A propensity-annotated exposure log over `num_users x num_items`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedDataset {
    pub num_users: usize,
    pub num_items: usize,
    pub records: Vec<LoggedInteraction>,
    #[serde(default)]
    pub provenance: Provenance,
}

/// A single broken invariant found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Index of the offending record, if the violation is record-level.
    pub record: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.record {
            Some(idx) => write!(f, "record {idx}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every dataset invariant without mutating the input.
pub fn validate_dataset(dataset: &LoggedDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if dataset.records.is_empty() {
        out.push(Violation {
            record: None,
            message: "dataset has no records".into(),
        });
    }
    for (idx, rec) in dataset.records.iter().enumerate() {
        let mut push = |message: &str| {
            out.push(Violation {
                record: Some(idx),
                message: message.to_string(),
            })
        };
        if rec.user >= dataset.num_users {
            push("user index out of range");
        }
        if rec.item >= dataset.num_items {
            push("item index out of range");
        }
        if rec.reward > 1 {
            push("reward is not binary");
        }
        if !(rec.propensity > 0.0 && rec.propensity <= 1.0) {
            push("propensity out of range");
        }
    }
    out
}

impl LoggedDataset {
    pub fn new(num_users: usize, num_items: usize, records: Vec<LoggedInteraction>) -> Self {
        Self {
            num_users,
            num_items,
            records,
            provenance: Provenance::Unknown,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Errors with the first violation if any invariant is broken.
    pub fn ensure_valid(&self) -> Result<()> {
        match validate_dataset(self).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidInput(v.to_string())),
        }
    }

    /// Sub-log containing the records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            num_users: self.num_users,
            num_items: self.num_items,
            records: indices.iter().map(|&i| self.records[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Per-user sets of clicked items, sorted and deduplicated.
    pub fn positives_by_user(&self) -> Vec<Vec<usize>> {
        let mut pos = vec![Vec::new(); self.num_users];
        for rec in self.records.iter().filter(|r| r.clicked()) {
            pos[rec.user].push(rec.item);
        }
        for row in &mut pos {
            row.sort_unstable();
            row.dedup();
        }
        pos
    }

    pub fn mean_reward(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.reward as f64).sum::<f64>() / self.records.len() as f64
    }

    /// Random record-level split into `(train, eval)` with
    /// `round(eval_fraction * n)` records held out. The two parts are disjoint
    /// by record index.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&eval_fraction) {
            return Err(Error::config("eval_fraction", "must lie in [0, 1)"));
        }
        let mut idx: Vec<usize> = (0..self.records.len()).collect();
        idx.shuffle(&mut rng::substream(seed, Domain::Split, 0));
        let n_eval = (eval_fraction * idx.len() as f64).round() as usize;
        let (eval, train) = idx.split_at(n_eval);
        let mut train = train.to_vec();
        let mut eval = eval.to_vec();
        train.sort_unstable();
        eval.sort_unstable();
        Ok((self.subset(&train), self.subset(&eval)))
    }
}

/// Storage for the rows of a [`TargetPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyRows {
    /// Full `U x I` probability matrix.
    Dense(Matrix),
    /// Per-user `(item, prob)` lists sorted by item; unlisted items have
    /// probability zero.
    Sparse(Vec<Vec<(usize, f64)>>),
    /// One item distribution shared by all users.
    Shared(Vec<f64>),
}

/// A per-user distribution over items, `pi(i|u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPolicy {
    num_users: usize,
    num_items: usize,
    rows: PolicyRows,
}

fn check_row(row: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut sum = 0.0;
    for p in row {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(Error::InvalidInput(format!(
                "{what} has a negative or non-finite entry"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(Error::InvalidInput(format!(
            "{what} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

impl TargetPolicy {
    pub fn dense(probs: Matrix) -> Result<Self> {
        for u in 0..probs.rows() {
            check_row(probs.row(u).iter().copied(), &format!("policy row {u}"))?;
        }
        Ok(Self {
            num_users: probs.rows(),
            num_items: probs.cols(),
            rows: PolicyRows::Dense(probs),
        })
    }

    pub fn sparse(num_items: usize, mut rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (u, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(i, _)| i);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidInput(format!(
                    "policy row {u} lists an item twice"
                )));
            }
            if row.iter().any(|&(i, _)| i >= num_items) {
                return Err(Error::InvalidInput(format!(
                    "policy row {u} has an item index out of range"
                )));
            }
            check_row(row.iter().map(|&(_, p)| p), &format!("policy row {u}"))?;
        }
        Ok(Self {
            num_users: rows.len(),
            num_items,
            rows: PolicyRows::Sparse(rows),
        })
    }

    pub fn shared(num_users: usize, dist: Vec<f64>) -> Result<Self> {
        check_row(dist.iter().copied(), "shared policy distribution")?;
        Ok(Self {
            num_users,
            num_items: dist.len(),
            rows: PolicyRows::Shared(dist),
        })
    }

    pub fn uniform(num_users: usize, num_items: usize) -> Self {
        Self {
            num_users,
            num_items,
            rows: PolicyRows::Shared(vec![1.0 / num_items as f64; num_items]),
        }
    }

    /// Every user receives `item` with probability one.
    pub fn point_mass(num_users: usize, num_items: usize, item: usize) -> Result<Self> {
        if item >= num_items {
            return Err(Error::InvalidInput(format!(
                "point-mass item {item} out of range"
            )));
        }
        let mut dist = vec![0.0; num_items];
        dist[item] = 1.0;
        Self::shared(num_users, dist)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn rows(&self) -> &PolicyRows {
        &self.rows
    }

    /// `pi(item | user)`.
    pub fn prob(&self, user: usize, item: usize) -> f64 {
        match &self.rows {
            PolicyRows::Dense(m) => m.get(user, item),
            PolicyRows::Shared(d) => d[item],
            PolicyRows::Sparse(rows) => {
                let row = &rows[user];
                match row.binary_search_by_key(&item, |&(i, _)| i) {
                    Ok(pos) => row[pos].1,
                    Err(_) => 0.0,
                }
            }
        }
    }

    /// Materialized row for `user`.
    pub fn row_dense(&self, user: usize) -> Vec<f64> {
        match &self.rows {
            PolicyRows::Dense(m) => m.row(user).to_vec(),
            PolicyRows::Shared(d) => d.clone(),
            PolicyRows::Sparse(rows) => {
                let mut out = vec![0.0; self.num_items];
                for &(i, p) in &rows[user] {
                    out[i] = p;
                }
                out
            }
        }
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.num_users)
            .map(|u| (self.row_dense(u).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Synthetic-only ground truth used as the oracle for estimator checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    /// True click probabilities, `U x I`.
    pub ctr: Matrix,
    /// Item exposure distribution shared by all users.
    pub logging_policy: Vec<f64>,
    pub target_policy: TargetPolicy,
}

impl GroundTruthModel {
    pub fn new(ctr: Matrix, logging_policy: Vec<f64>, target_policy: TargetPolicy) -> Result<Self> {
        if ctr.as_slice().iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("CTR entries must lie in [0, 1]".into()));
        }
        if logging_policy.len() != ctr.cols() {
            return Err(Error::DimensionMismatch(
                "logging policy length differs from item count".into(),
            ));
        }
        check_row(logging_policy.iter().copied(), "logging policy")?;
        if logging_policy.iter().any(|&p| p == 0.0) {
            return Err(Error::InvalidInput(
                "logging policy must have full support".into(),
            ));
        }
        Ok(Self {
            ctr,
            logging_policy,
            target_policy,
        })
    }

    /// The logging distribution as a policy, for evaluating `pi_log` itself.
    pub fn logging_as_policy(&self) -> TargetPolicy {
        TargetPolicy {
            num_users: self.ctr.rows(),
            num_items: self.ctr.cols(),
            rows: PolicyRows::Shared(self.logging_policy.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Dm,
    Ips,
    Snips,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dm => "dm",
            EstimatorKind::Ips => "ips",
            EstimatorKind::Snips => "snips",
        }
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dm" => Ok(Self::Dm),
            "ips" => Ok(Self::Ips),
            "snips" => Ok(Self::Snips),
            other => Err(Error::config(
                "estimators",
                format!("unknown estimator `{other}` (expected dm, ips or snips)"),
            )),
        }
    }
}

/// Output of an off-policy estimator, optionally with bootstrap diagnostics.
///
/// Without a bootstrap pass the bootstrap fields mirror the point estimate
/// and the standard deviation is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: EstimatorKind,
    pub value: f64,
    pub bootstrap_mean: f64,
    pub bootstrap_std: f64,
    /// 2.5th percentile of the bootstrap distribution.
    pub ci_low: f64,
    /// 97.5th percentile of the bootstrap distribution.
    pub ci_high: f64,
    pub ess: f64,
    pub max_weight: f64,
    pub num_records: usize,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub bootstrap_failures: usize,
    /// How the evaluated policy was built, e.g. `topk_uniform(10)`.
    #[serde(default)]
    pub policy: Option<String>,
}

impl EstimateReport {
    pub(crate) fn point(
        estimator: EstimatorKind,
        value: f64,
        ess: f64,
        max_weight: f64,
        num_records: usize,
        clip: Option<f64>,
    ) -> Self {
        Self {
            estimator,
            value,
            bootstrap_mean: value,
            bootstrap_std: 0.0,
            ci_low: value,
            ci_high: value,
            ess,
            max_weight,
            num_records,
            clip,
            bootstrap_resamples: 0,
            bootstrap_failures: 0,
            policy: None,
        }
    }
}
