use rand::Rng as _;

use crate::domain::{LoggedDataset, TargetPolicy};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::loss::Triplet;

/// How a record's importance weight is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `min(1 / b, M)`
    #[default]
    InversePropensity,
    /// `min(pi(i|u) / b, M)`
    TargetOverLogging,
}

/// Clipped importance weight of one logged record.
pub fn compute_weight(
    record: &crate::domain::LoggedInteraction,
    policy: Option<&TargetPolicy>,
    mode: WeightMode,
    clip: f64,
) -> Result<f64> {
    if !(record.propensity > 0.0) {
        return Err(Error::InvalidInput(format!(
            "record ({}, {}) has non-positive propensity",
            record.user, record.item
        )));
    }
    let raw = match mode {
        WeightMode::InversePropensity => 1.0 / record.propensity,
        WeightMode::TargetOverLogging => {
            let policy = policy.ok_or_else(|| {
                Error::config("weight_mode", "target_over_logging needs a target policy")
            })?;
            policy.prob(record.user, record.item) / record.propensity
        }
    };
    Ok(raw.min(clip))
}

/// Uniform positive/negative sampler for BPR.
///
/// Positives are drawn uniformly over clicked records (so a pair logged
/// twice is twice as likely); negatives uniformly over the items the user
/// never clicked, by rejection.
#[derive(Debug, Clone)]
pub struct TripletSampler {
    /// `(user, item, weight)` of each eligible clicked record.
    positives: Vec<(usize, usize, f64)>,
    clicked: Vec<Vec<usize>>,
    num_items: usize,
}

impl TripletSampler {
    /// `weight_of` maps a clicked record to its training weight.
    pub fn new(
        dataset: &LoggedDataset,
        mut weight_of: impl FnMut(&crate::domain::LoggedInteraction) -> Result<f64>,
    ) -> Result<Self> {
        let clicked = dataset.positives_by_user();
        let mut positives = Vec::new();
        let mut skipped_users = Vec::new();
        for rec in dataset.records.iter().filter(|r| r.clicked()) {
            if clicked[rec.user].len() >= dataset.num_items {
                skipped_users.push(rec.user);
                continue;
            }
            positives.push((rec.user, rec.item, weight_of(rec)?));
        }
        if !skipped_users.is_empty() {
            skipped_users.dedup();
            log::warn!(
                "{} user(s) clicked every item and have no negatives; their positives are skipped",
                skipped_users.len()
            );
        }
        if positives.is_empty() {
            return Err(Error::InvalidInput(
                "no clicked records to build BPR triplets from".into(),
            ));
        }
        Ok(Self {
            positives,
            clicked,
            num_items: dataset.num_items,
        })
    }

    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Vec<Triplet> {
        (0..batch_size)
            .map(|_| {
                let (user, positive, weight) =
                    self.positives[rng.random_range(0..self.positives.len())];
                let seen = &self.clicked[user];
                let negative = loop {
                    let j = rng.random_range(0..self.num_items);
                    if seen.binary_search(&j).is_err() {
                        break j;
                    }
                };
                Triplet {
                    user,
                    positive,
                    negative,
                    weight,
                }
            })
            .collect()
    }
}
