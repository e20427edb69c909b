//! Flat key-value run configuration.
//!
//! Every command reads the same flat TOML document. Values from the file are
//! overlaid by `--set key=value` pairs and then by the global `--seed`, and
//! the resolved result is echoed into the run manifest.

use std::path::Path;

use ipsrec::graph::PolicyMode;
use ipsrec::ingest::{MovieLensFormat, DEFAULT_CLICK_THRESHOLD};
use ipsrec::synthgen::{ExposureSimConfig, PopularityTransform, ToyConfig};
use ipsrec::training::{EvalMetric, Objective, TrainConfig, WeightMode};
use ipsrec::EstimatorKind;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    // toy generator
    pub num_users: usize,
    pub num_items: usize,
    pub exposures_per_user: usize,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub popularity_scale: f64,

    // ingestion and biased exposure
    pub format: String,
    pub threshold: u8,
    pub temperature: f64,
    pub exposure_transform: PopularityTransform,

    // training
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
    pub patience: usize,
    pub eval_metric: String,
    pub eval_policy: String,
    pub exclude_train: bool,
    pub eval_fraction: f64,

    // evaluation and sweeps
    pub estimators: Vec<String>,
    pub bootstrap_resamples: usize,
    pub policy: String,
    pub estimator_clip: Option<f64>,
    pub temperatures: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let toy = ToyConfig::default();
        let sim = ExposureSimConfig::default();
        let train = TrainConfig::default();
        Self {
            seed: 0,
            num_users: toy.num_users,
            num_items: toy.num_items,
            exposures_per_user: toy.exposures_per_user,
            beta_alpha: toy.beta_alpha,
            beta_beta: toy.beta_beta,
            popularity_scale: toy.popularity_scale,
            format: "100k".into(),
            threshold: DEFAULT_CLICK_THRESHOLD,
            temperature: sim.temperature,
            exposure_transform: sim.transform,
            objective: train.objective,
            weight_mode: train.weight_mode,
            pr_alpha: train.pr_alpha,
            weight_clip: train.weight_clip,
            embedding_dim: train.embedding_dim,
            layers: train.layers,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            max_epochs: train.max_epochs,
            patience: train.patience,
            eval_metric: train.eval_metric.to_string(),
            eval_policy: "topk:10".into(),
            exclude_train: train.exclude_train,
            eval_fraction: 0.2,
            estimators: vec!["ips".into(), "snips".into()],
            bootstrap_resamples: ipsrec::estimators::DEFAULT_BOOTSTRAP_RESAMPLES,
            policy: "topk:10".into(),
            estimator_clip: None,
            temperatures: vec![0.5, 0.8, 1.0, 1.2, 1.5, 2.0],
        }
    }
}

fn parse_override(pair: &str) -> Result<(String, toml::Value), CliError> {
    let (key, raw) = pair
        .split_once('=')
        .ok_or_else(|| CliError::usage("set", format!("`{pair}` is not key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    // Bare words such as `ips_bpr` are not TOML values; treat them as strings.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key, value))
}

fn field_of_toml_error(msg: &str) -> String {
    // toml reports e.g. "unknown field `foo`" or "... for key `bar`".
    for marker in ["unknown field `", "for key `", "key `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".into()
}

impl RunConfig {
    /// File values, then `key=value` overrides, then an explicit seed.
    pub fn resolve(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(ipsrec::Error::from)?;
                toml::from_str::<toml::Table>(&text).map_err(|e| {
                    CliError::usage("config", format!("{}: {}", p.display(), e.message()))
                })?
            }
            None => toml::Table::new(),
        };
        for pair in overrides {
            let (k, v) = parse_override(pair)?;
            table.insert(k, v);
        }
        if let Some(s) = seed {
            let s = i64::try_from(s).map_err(|_| CliError::usage("seed", "must fit in a signed 64-bit integer"))?;
            table.insert("seed".into(), toml::Value::Integer(s));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                let msg = e.message().to_string();
                CliError::usage(&field_of_toml_error(&msg), msg)
            })?;
        Ok(cfg)
    }

    pub fn toy(&self) -> Result<ToyConfig, CliError> {
        let cfg = ToyConfig {
            num_users: self.num_users,
            num_items: self.num_items,
            exposures_per_user: self.exposures_per_user,
            beta_alpha: self.beta_alpha,
            beta_beta: self.beta_beta,
            popularity_scale: self.popularity_scale,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exposure(&self) -> Result<ExposureSimConfig, CliError> {
        let cfg = ExposureSimConfig {
            temperature: self.temperature,
            seed: self.seed,
            exposures_per_user: self.exposures_per_user,
            transform: self.exposure_transform,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn movielens_format(&self) -> Result<MovieLensFormat, CliError> {
        Ok(self.format.parse()?)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let eval_metric: EvalMetric = self.eval_metric.parse()?;
        let eval_policy = self.policy_mode(&self.eval_policy, "eval_policy")?;
        if !(0.0..1.0).contains(&self.eval_fraction) {
            return Err(CliError::usage("eval_fraction", "must lie in [0, 1)"));
        }
        let cfg = TrainConfig {
            objective: self.objective,
            weight_mode: self.weight_mode,
            pr_alpha: self.pr_alpha,
            weight_clip: self.weight_clip,
            embedding_dim: self.embedding_dim,
            layers: self.layers,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_metric,
            eval_policy,
            exclude_train: self.exclude_train,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn policy_mode(&self, text: &str, field: &str) -> Result<PolicyMode, CliError> {
        text.parse::<PolicyMode>()
            .map_err(|e| CliError::usage(field, e.to_string()))
    }

    pub fn estimator_kinds(&self) -> Result<Vec<EstimatorKind>, CliError> {
        if self.estimators.is_empty() {
            return Err(CliError::usage("estimators", "list is empty"));
        }
        let mut kinds = Vec::new();
        for name in &self.estimators {
            let k: EstimatorKind = name.parse()?;
            if !kinds.contains(&k) {
                kinds.push(k);
            }
        }
        if self.bootstrap_resamples < 2 {
            return Err(CliError::usage("bootstrap_resamples", "must be at least 2"));
        }
        if let Some(c) = self.estimator_clip {
            if !(c > 0.0) {
                return Err(CliError::usage("estimator_clip", "must be positive"));
            }
        }
        Ok(kinds)
    }

    pub fn sweep_temperatures(&self) -> Result<Vec<f64>, CliError> {
        if self.temperatures.is_empty() {
            return Err(CliError::usage("temperatures", "list is empty"));
        }
        if let Some(t) = self.temperatures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(CliError::usage("temperatures", format!("{t} is not positive")));
        }
        Ok(self.temperatures.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_without_a_file() {
        let cfg = RunConfig::resolve(None, &[], None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.toy().unwrap(), ToyConfig::default());
    }

    #[test]
    fn overrides_beat_file_and_seed_beats_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "num_users = 10\nseed = 3\nobjective = \"naive_bpr\"\n").unwrap();
        let sets = vec!["num_users=20".to_string(), "objective=ips_bpr_pr".to_string()];
        let cfg = RunConfig::resolve(Some(&path), &sets, Some(9)).unwrap();
        assert_eq!(cfg.num_users, 20);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.objective, Objective::IpsBprPr);
    }

    #[test]
    fn list_override_parses_as_toml() {
        let sets = vec!["temperatures=[0.5, 2.0]".to_string(), "estimators=[\"dm\"]".to_string()];
        let cfg = RunConfig::resolve(None, &sets, None).unwrap();
        assert_eq!(cfg.temperatures, vec![0.5, 2.0]);
        assert_eq!(cfg.estimators, vec!["dm".to_string()]);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = RunConfig::resolve(None, &["num_user=3".to_string()], None).unwrap_err();
        match err {
            CliError::Usage { field, .. } => assert_eq!(field, "num_user"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn invalid_values_are_usage_errors() {
        let cfg = RunConfig::resolve(None, &["num_items=0".to_string()], None).unwrap();
        let err = cfg.toy().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("num_items"));
        let cfg = RunConfig::resolve(None, &["temperatures=[1.0, 0.0]".to_string()], None).unwrap();
        assert_eq!(cfg.sweep_temperatures().unwrap_err().exit_code(), 2);
        let cfg = RunConfig::resolve(None, &["estimators=[\"ips\", \"dr\"]".to_string()], None).unwrap();
        assert_eq!(cfg.estimator_kinds().unwrap_err().exit_code(), 2);
    }
}
