//! Training of the graph ranker under naive or importance-weighted
//! objectives, with Adam and per-epoch early stopping.
//!
//! Each optimizer step propagates the base tables once, accumulates the
//! batch gradient on the final embeddings, maps it back through the
//! (symmetric) propagation, and applies one Adam update per table.

mod adam;
mod loss;
mod sampler;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use loss::{
    bpr_terms, ips_bce_loss_and_grad, ips_bpr_loss_and_grad, pr_penalty_and_grad, sigmoid, BceExample, BprLoss,
    EmbeddingGrads, Triplet, LOG_FLOOR,
};
pub use sampler::{compute_weight, TripletSampler, WeightMode};

use crate::domain::{LoggedDataset, TargetPolicy};
use crate::error::{Error, Result};
use crate::estimators::{effective_sample_size, snips_estimate, weighted_samples};
use crate::graph::{extract_policy, propagate_backward, BipartiteGraph, EmbeddingModel, PolicyMode};
use crate::metrics::mean_ndcg_at_k;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    NaiveBpr,
    #[default]
    IpsBpr,
    IpsBprPr,
    NaiveBce,
    IpsBce,
}

impl Objective {
    pub fn is_pairwise(self) -> bool {
        matches!(self, Objective::NaiveBpr | Objective::IpsBpr | Objective::IpsBprPr)
    }

    pub fn is_weighted(self) -> bool {
        matches!(self, Objective::IpsBpr | Objective::IpsBprPr | Objective::IpsBce)
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::config("objective", format!("unknown objective `{s}`")))
    }
}

/// Quantity monitored on the validation split after every epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvalMetric {
    Ndcg { k: usize },
    Snips,
}

impl Default for EvalMetric {
    fn default() -> Self {
        EvalMetric::Ndcg { k: 10 }
    }
}

impl fmt::Display for EvalMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMetric::Ndcg { k } => write!(f, "ndcg@{k}"),
            EvalMetric::Snips => f.write_str("snips"),
        }
    }
}

impl FromStr for EvalMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "snips" {
            return Ok(EvalMetric::Snips);
        }
        let k = s
            .strip_prefix("ndcg@")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|&k| k >= 1)
            .ok_or_else(|| Error::config("eval_metric", format!("`{s}` is not `ndcg@<k>` or `snips`")))?;
        Ok(EvalMetric::Ndcg { k })
    }
}

impl TryFrom<String> for EvalMetric {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EvalMetric> for String {
    fn from(m: EvalMetric) -> String {
        m.to_string()
    }
}

mod policy_mode_str {
    use super::PolicyMode;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mode: &PolicyMode, s: S) -> Result<S::Ok, S::Error> {
        let text = match mode {
            PolicyMode::Softmax { temperature } => format!("softmax:{temperature}"),
            PolicyMode::TopkUniform { k } => format!("topk:{k}"),
        };
        s.serialize_str(&text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<PolicyMode, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub weight_mode: WeightMode,
    pub pr_alpha: f64,
    pub weight_clip: f64,
    pub embedding_dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 never stops early.
    pub patience: usize,
    pub eval_metric: EvalMetric,
    /// Policy used for the SNIPS metric and the ESS column.
    #[serde(with = "policy_mode_str")]
    pub eval_policy: PolicyMode,
    /// Mask training positives when ranking or building the eval policy.
    pub exclude_train: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            objective: Objective::default(),
            weight_mode: WeightMode::default(),
            pr_alpha: 0.1,
            weight_clip: 100.0,
            embedding_dim: 64,
            layers: 3,
            learning_rate: adam.learning_rate,
            batch_size: 1024,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            max_epochs: 50,
            patience: 5,
            eval_metric: EvalMetric::default(),
            eval_policy: PolicyMode::TopkUniform { k: 10 },
            exclude_train: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(field, reason))
            }
        };
        check(self.pr_alpha >= 0.0 && self.pr_alpha.is_finite(), "pr_alpha", "must be >= 0")?;
        check(self.weight_clip > 0.0, "weight_clip", "must be > 0")?;
        check(self.embedding_dim >= 1, "embedding_dim", "must be >= 1")?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            "must be > 0",
        )?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check((0.0..1.0).contains(&self.adam_beta1), "adam_beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&self.adam_beta2), "adam_beta2", "must lie in [0, 1)")?;
        check(self.adam_eps > 0.0, "adam_eps", "must be > 0")
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Regularizer strength actually applied by the objective.
    pub fn effective_pr_alpha(&self) -> f64 {
        if self.objective == Objective::IpsBprPr {
            self.pr_alpha
        } else {
            0.0
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-example objective over the epoch's steps.
    pub train_loss: f64,
    pub eval_metric: f64,
    pub ess: f64,
    pub wall_ms: u64,
}

pub fn write_epoch_log<W: std::io::Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "eval_metric", "ess", "wall_ms"])?;
    for row in log {
        w.write_record([
            row.epoch.to_string(),
            crate::formats::fmt_f64(row.train_loss),
            crate::formats::fmt_f64(row.eval_metric),
            crate::formats::fmt_f64(row.ess),
            row.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-epoch model, propagated.
    pub model: EmbeddingModel,
    pub log: Vec<EpochLog>,
    /// 1-based epoch of the returned model; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

/// A mini-batch for either objective family.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Pairwise(Vec<Triplet>),
    Pointwise(Vec<BceExample>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Pairwise(b) => b.len(),
            Batch::Pointwise(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_weight(&self) -> f64 {
        let ws: Box<dyn Iterator<Item = f64>> = match self {
            Batch::Pairwise(b) => Box::new(b.iter().map(|t| t.weight)),
            Batch::Pointwise(b) => Box::new(b.iter().map(|e| e.weight)),
        };
        ws.fold(0.0, f64::max)
    }
}

/// Batch loss and its gradient with respect to the base tables. Leaves the
/// model propagated at its current parameters.
pub fn batch_loss_and_base_grads(
    model: &mut EmbeddingModel,
    graph: &BipartiteGraph,
    batch: &Batch,
    pr_alpha: f64,
) -> Result<(f64, EmbeddingGrads)> {
    model.propagate(graph)?;
    let (eu, ei) = model.final_embeddings()?;
    let (loss, g) = match batch {
        Batch::Pairwise(b) => {
            let (l, g) = ips_bpr_loss_and_grad(b, eu, ei, pr_alpha);
            (l.total(), g)
        }
        Batch::Pointwise(b) => ips_bce_loss_and_grad(b, eu, ei),
    };
    let (gu, gi) = propagate_backward(&g.users, &g.items, graph, model.num_layers())?;
    Ok((loss, EmbeddingGrads { users: gu, items: gi }))
}

/// Validation hook: `(metric, ess)` for the current propagated model.
pub trait Evaluator {
    fn evaluate(&mut self, model: &EmbeddingModel) -> Result<(f64, f64)>;
}

impl<F: FnMut(&EmbeddingModel) -> Result<(f64, f64)>> Evaluator for F {
    fn evaluate(&mut self, model: &EmbeddingModel) -> Result<(f64, f64)> {
        self(model)
    }
}

/// Validation against a held-out log, per `cfg.eval_metric`.
///
/// The ESS column is the Kish size of the eval policy's weights on the
/// held-out records. A SNIPS metric without overlap is recorded as 0.
pub struct SplitEvaluator<'a> {
    eval: &'a LoggedDataset,
    relevant: Vec<Vec<usize>>,
    exclude: Option<Vec<Vec<usize>>>,
    metric: EvalMetric,
    policy_mode: PolicyMode,
}

impl<'a> SplitEvaluator<'a> {
    pub fn new(train: &LoggedDataset, eval: &'a LoggedDataset, cfg: &TrainConfig) -> Self {
        Self {
            eval,
            relevant: eval.positives_by_user(),
            exclude: cfg.exclude_train.then(|| train.positives_by_user()),
            metric: cfg.eval_metric,
            policy_mode: cfg.eval_policy,
        }
    }

    pub fn policy(&self, model: &EmbeddingModel) -> Result<TargetPolicy> {
        extract_policy(model, self.policy_mode, self.exclude.as_deref())
    }
}

impl Evaluator for SplitEvaluator<'_> {
    fn evaluate(&mut self, model: &EmbeddingModel) -> Result<(f64, f64)> {
        if self.eval.is_empty() {
            return Ok((0.0, 0.0));
        }
        let policy = self.policy(model)?;
        let weights: Vec<f64> = weighted_samples(self.eval, &policy, None)?
            .iter()
            .map(|s| s.weight)
            .collect();
        let ess = effective_sample_size(&weights).unwrap_or(0.0);
        let value = match self.metric {
            EvalMetric::Ndcg { k } => {
                let empty = Vec::new();
                let exclude = self.exclude.as_ref().unwrap_or(&empty);
                mean_ndcg_at_k(&model.score_matrix()?, &self.relevant, exclude, k)
            }
            EvalMetric::Snips => match snips_estimate(self.eval, &policy, None) {
                Ok(r) => r.value,
                Err(Error::NoOverlap) => {
                    log::warn!("eval policy has no overlap with the held-out log; SNIPS recorded as 0");
                    0.0
                }
                Err(e) => return Err(e),
            },
        };
        Ok((value, ess))
    }
}

/// Trains on `dataset` and early-stops on `eval_split`.
pub fn train(
    dataset: &LoggedDataset,
    graph: &BipartiteGraph,
    cfg: &TrainConfig,
    eval_split: &LoggedDataset,
) -> Result<TrainOutcome> {
    let mut evaluator = SplitEvaluator::new(dataset, eval_split, cfg);
    train_with_evaluator(dataset, graph, cfg, None, &mut evaluator)
}

enum BatchSource {
    Pairwise(TripletSampler),
    Pointwise(Vec<BceExample>),
}

/// General training loop. `weight_policy` supplies `pi` when
/// `weight_mode = target_over_logging`.
pub fn train_with_evaluator(
    dataset: &LoggedDataset,
    graph: &BipartiteGraph,
    cfg: &TrainConfig,
    weight_policy: Option<&TargetPolicy>,
    evaluator: &mut dyn Evaluator,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    dataset.ensure_valid()?;
    if graph.num_users() != dataset.num_users || graph.num_items() != dataset.num_items {
        return Err(Error::DimensionMismatch("graph and training log shapes differ".into()));
    }

    let mut model = EmbeddingModel::random(
        dataset.num_users,
        dataset.num_items,
        cfg.embedding_dim,
        cfg.layers,
        cfg.seed,
    );
    let weight_of = |r: &crate::domain::LoggedInteraction| -> Result<f64> {
        if cfg.objective.is_weighted() {
            compute_weight(r, weight_policy, cfg.weight_mode, cfg.weight_clip)
        } else {
            Ok(1.0)
        }
    };
    let source = if cfg.objective.is_pairwise() {
        BatchSource::Pairwise(TripletSampler::new(dataset, weight_of)?)
    } else {
        let examples = dataset
            .records
            .iter()
            .map(|r| {
                Ok(BceExample {
                    user: r.user,
                    item: r.item,
                    reward: r.reward as f64,
                    weight: weight_of(r)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BatchSource::Pointwise(examples)
    };
    let examples_per_epoch = match &source {
        BatchSource::Pairwise(s) => s.num_positives(),
        BatchSource::Pointwise(e) => e.len(),
    };
    let steps_per_epoch = examples_per_epoch.div_ceil(cfg.batch_size);

    let adam = cfg.adam();
    let pr_alpha = cfg.effective_pr_alpha();
    let mut user_state = AdamState::new(model.base_users().as_slice().len());
    let mut item_state = AdamState::new(model.base_items().as_slice().len());
    let mut sampler_rng = rng::substream(cfg.seed, Domain::TripletSampler, 0);

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, EmbeddingModel)> = None;
    let mut since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut order: Vec<usize> = Vec::new();
        if let BatchSource::Pointwise(examples) = &source {
            order = (0..examples.len()).collect();
            order.shuffle(&mut rng::substream(cfg.seed, Domain::RecordShuffle, epoch as u64));
        }
        for step in 0..steps_per_epoch {
            let batch = match &source {
                BatchSource::Pairwise(sampler) => {
                    let size = cfg.batch_size.min(examples_per_epoch - step * cfg.batch_size);
                    Batch::Pairwise(sampler.sample(size, &mut sampler_rng))
                }
                BatchSource::Pointwise(examples) => {
                    let lo = step * cfg.batch_size;
                    let hi = (lo + cfg.batch_size).min(examples.len());
                    Batch::Pointwise(order[lo..hi].iter().map(|&k| examples[k]).collect())
                }
            };
            debug_assert!(batch.max_weight() <= cfg.weight_clip);
            let (loss, grads) = batch_loss_and_base_grads(&mut model, graph, &batch, pr_alpha)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteGradient);
            }
            loss_sum += loss;
            seen += batch.len();
            let (users, items) = model.base_mut();
            adam_step(users.as_mut_slice(), grads.users.as_slice(), &mut user_state, &adam)?;
            adam_step(items.as_mut_slice(), grads.items.as_slice(), &mut item_state, &adam)?;
        }
        model.propagate(graph)?;
        let (metric, ess) = evaluator.evaluate(&model)?;
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / seen.max(1) as f64,
            eval_metric: metric,
            ess,
            wall_ms: started.elapsed().as_millis() as u64,
        });
        log::info!("epoch {epoch}: loss {:.6}, {} {:.6}", loss_sum / seen.max(1) as f64, cfg.eval_metric, metric);

        if best.as_ref().is_none_or(|(m, _, _)| metric > *m) {
            best = Some((metric, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }

    match best {
        Some((_, epoch, model)) => Ok(TrainOutcome {
            model,
            log,
            best_epoch: Some(epoch),
        }),
        None => {
            model.propagate(graph)?;
            Ok(TrainOutcome {
                model,
                log,
                best_epoch: None,
            })
        }
    }
}
