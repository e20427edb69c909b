//! Synthetic log generation.
//!
//! Two simulators live here. The toy generator draws a full ground-truth CTR
//! matrix from a Beta distribution and exposes items to every user through
//! an exponential popularity curve. The biased-exposure simulator takes a
//! binarized preference matrix (e.g. MovieLens) and exposes items through a
//! temperature-controlled softmax over item popularity.
//!
//! Both sample exposures with replacement, so the recorded propensity of a
//! record is exactly the logging probability of its item. Each user draws
//! from its own RNG substream, which makes the output independent of the
//! rayon thread count.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;
use rand_distr::Beta;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    GroundTruthModel, LoggedDataset, LoggedInteraction, Matrix, Provenance, TargetPolicy,
};
use crate::error::{Error, Result};
use crate::ingest::PreferenceMatrix;
use crate::rng::{self, Domain};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub exposures_per_user: usize,
    pub beta_alpha: f64,
    pub beta_beta: f64,
    pub popularity_scale: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_users: 1000,
            num_items: 200,
            exposures_per_user: 5,
            beta_alpha: 2.0,
            beta_beta: 5.0,
            popularity_scale: 5.0,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0 {
            return Err(Error::config("num_users", "must be at least 1"));
        }
        if self.num_items == 0 {
            return Err(Error::config("num_items", "must be at least 1"));
        }
        if self.exposures_per_user == 0 {
            return Err(Error::config("exposures_per_user", "must be at least 1"));
        }
        if !(self.beta_alpha > 0.0 && self.beta_alpha.is_finite()) {
            return Err(Error::config("beta_alpha", "must be positive"));
        }
        if !(self.beta_beta > 0.0 && self.beta_beta.is_finite()) {
            return Err(Error::config("beta_beta", "must be positive"));
        }
        if !(self.popularity_scale >= 0.0 && self.popularity_scale.is_finite()) {
            return Err(Error::config("popularity_scale", "must be non-negative"));
        }
        Ok(())
    }
}

/// U x I matrix of Beta(alpha, beta) click probabilities.
pub fn gen_ctr_matrix(cfg: &ToyConfig) -> Result<Matrix> {
    cfg.validate()?;
    let beta = Beta::new(cfg.beta_alpha, cfg.beta_beta)
        .map_err(|e| Error::config("beta_alpha", e.to_string()))?;
    let mut ctr = Matrix::zeros(cfg.num_users, cfg.num_items);
    ctr.as_mut_slice()
        .par_chunks_mut(cfg.num_items)
        .enumerate()
        .for_each(|(u, row)| {
            let mut rng = rng::substream(cfg.seed, Domain::CtrMatrix, u as u64);
            for c in row.iter_mut() {
                *c = beta.sample(&mut rng);
            }
        });
    Ok(ctr)
}

/// Exponential popularity curve `w_i = exp(scale * (i-1)/(I-1))` over
/// 1-based item positions, normalized to a distribution.
pub fn popularity_logging_policy(num_items: usize, scale: f64) -> Result<Vec<f64>> {
    if num_items == 0 {
        return Err(Error::config("num_items", "must be at least 1"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(Error::config("popularity_scale", "must be non-negative"));
    }
    if num_items == 1 {
        return Ok(vec![1.0]);
    }
    let denom = (num_items - 1) as f64;
    let weights: Vec<f64> = (0..num_items)
        .map(|k| (scale * k as f64 / denom).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Samples `K` exposures per user from `logging_policy` and clicks from the
/// CTR matrix. The returned ground truth carries a uniform target policy.
pub fn simulate_toy_log(
    ctr: &Matrix,
    logging_policy: &[f64],
    cfg: &ToyConfig,
) -> Result<(LoggedDataset, GroundTruthModel)> {
    cfg.validate()?;
    if ctr.rows() != cfg.num_users || ctr.cols() != cfg.num_items {
        return Err(Error::DimensionMismatch(format!(
            "CTR matrix is {}x{}, config says {}x{}",
            ctr.rows(),
            ctr.cols(),
            cfg.num_users,
            cfg.num_items
        )));
    }
    if logging_policy.len() != cfg.num_items {
        return Err(Error::DimensionMismatch(
            "logging policy length differs from item count".into(),
        ));
    }
    let sampler = WeightedIndex::new(logging_policy)
        .map_err(|e| Error::InvalidInput(format!("logging policy: {e}")))?;
    let k = cfg.exposures_per_user;
    let records: Vec<LoggedInteraction> = (0..cfg.num_users)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = rng::substream(cfg.seed, Domain::ToyExposure, u as u64);
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let item = sampler.sample(&mut rng);
                let click = rng.random::<f64>() < ctr.get(u, item);
                out.push(LoggedInteraction::new(
                    u,
                    item,
                    click as u8,
                    logging_policy[item],
                ));
            }
            out
        })
        .collect();
    let provenance = Provenance::Synthetic(serde_json::to_value(cfg)?);
    let dataset =
        LoggedDataset::new(cfg.num_users, cfg.num_items, records).with_provenance(provenance);
    let truth = GroundTruthModel::new(
        ctr.clone(),
        logging_policy.to_vec(),
        TargetPolicy::uniform(cfg.num_users, cfg.num_items),
    )?;
    Ok((dataset, truth))
}

/// Runs the full toy pipeline: CTR matrix, logging policy, log.
pub fn generate_toy(cfg: &ToyConfig) -> Result<(LoggedDataset, GroundTruthModel)> {
    let ctr = gen_ctr_matrix(cfg)?;
    let policy = popularity_logging_policy(cfg.num_items, cfg.popularity_scale)?;
    simulate_toy_log(&ctr, &policy, cfg)
}

/// Exact value `(1/U) sum_u sum_i pi(i|u) CTR[u,i]` of a policy.
pub fn true_policy_value(truth: &GroundTruthModel, policy: &TargetPolicy) -> Result<f64> {
    let ctr = &truth.ctr;
    if policy.num_users() != ctr.rows() || policy.num_items() != ctr.cols() {
        return Err(Error::DimensionMismatch(
            "policy shape differs from the CTR matrix".into(),
        ));
    }
    let total: f64 = (0..ctr.rows())
        .into_par_iter()
        .map(|u| {
            policy
                .row_dense(u)
                .iter()
                .zip(ctr.row(u))
                .map(|(p, c)| p * c)
                .sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / ctr.rows() as f64)
}

/// Argument of the exposure softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PopularityTransform {
    /// `log(count + 1) / tau`
    #[default]
    LogCount,
    /// `count / tau`
    RawCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExposureSimConfig {
    pub temperature: f64,
    pub seed: u64,
    pub exposures_per_user: usize,
    pub transform: PopularityTransform,
}

impl Default for ExposureSimConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            seed: 0,
            exposures_per_user: 5,
            transform: PopularityTransform::LogCount,
        }
    }
}

impl ExposureSimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if self.exposures_per_user == 0 {
            return Err(Error::config("exposures_per_user", "must be at least 1"));
        }
        Ok(())
    }
}

/// Softmax over transformed item popularity counts.
pub fn exposure_distribution(
    counts: &[usize],
    temperature: f64,
    transform: PopularityTransform,
) -> Result<Vec<f64>> {
    if counts.is_empty() {
        return Err(Error::InvalidInput("no items to expose".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::config("temperature", "must be positive"));
    }
    let logits: Vec<f64> = counts
        .iter()
        .map(|&c| match transform {
            PopularityTransform::LogCount => (c as f64 + 1.0).ln() / temperature,
            PopularityTransform::RawCount => c as f64 / temperature,
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Re-logs a preference matrix through a popularity-biased exposure policy.
/// A record's reward is 1 iff the pair is positive in the source data.
pub fn simulate_biased_exposure(
    prefs: &PreferenceMatrix,
    cfg: &ExposureSimConfig,
) -> Result<LoggedDataset> {
    cfg.validate()?;
    if prefs.num_positives() == 0 {
        return Err(Error::InvalidInput(
            "preference matrix has no positive interactions".into(),
        ));
    }
    let dist = exposure_distribution(&prefs.item_popularity(), cfg.temperature, cfg.transform)?;
    let sampler = WeightedIndex::new(&dist)
        .map_err(|e| Error::InvalidInput(format!("exposure distribution: {e}")))?;
    let k = cfg.exposures_per_user;
    let records: Vec<LoggedInteraction> = (0..prefs.num_users)
        .into_par_iter()
        .flat_map_iter(|u| {
            let mut rng = rng::substream(cfg.seed, Domain::BiasedExposure, u as u64);
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let item = sampler.sample(&mut rng);
                let reward = prefs.is_positive(u, item) as u8;
                out.push(LoggedInteraction::new(u, item, reward, dist[item]));
            }
            out
        })
        .collect();
    let provenance = Provenance::MovieLens(serde_json::to_value(cfg)?);
    Ok(LoggedDataset::new(prefs.num_users, prefs.num_items, records).with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small_cfg(seed: u64) -> ToyConfig {
        ToyConfig {
            num_users: 200,
            num_items: 50,
            seed,
            ..ToyConfig::default()
        }
    }

    #[test]
    fn ctr_mean_matches_beta_mean() {
        let cfg = ToyConfig::default();
        let ctr = gen_ctr_matrix(&cfg).unwrap();
        assert_eq!(ctr.as_slice().len(), 200_000);
        assert!((ctr.mean() - 2.0 / 7.0).abs() < 0.01, "{}", ctr.mean());
        assert!(ctr.as_slice().iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let cfg = ToyConfig {
            beta_alpha: 1.0,
            beta_beta: 1.0,
            ..ToyConfig::default()
        };
        let ctr = gen_ctr_matrix(&cfg).unwrap();
        assert!((ctr.mean() - 0.5).abs() < 0.01);
    }

    #[test]
    fn ctr_is_deterministic() {
        let cfg = small_cfg(42);
        assert_eq!(gen_ctr_matrix(&cfg).unwrap(), gen_ctr_matrix(&cfg).unwrap());
        assert_ne!(
            gen_ctr_matrix(&cfg).unwrap(),
            gen_ctr_matrix(&small_cfg(43)).unwrap()
        );
    }

    #[test]
    fn popularity_endpoints() {
        let p = popularity_logging_policy(200, 5.0).unwrap();
        let ratio = p[199] / p[0];
        assert_relative_eq!(ratio, 5f64.exp(), max_relative = 1e-12);
        assert_relative_eq!(5f64.exp(), 148.413159, max_relative = 1e-6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn popularity_scale_zero_is_uniform() {
        let p = popularity_logging_policy(7, 0.0).unwrap();
        assert!(p.iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn popularity_two_items_ln3() {
        let p = popularity_logging_policy(2, 3f64.ln()).unwrap();
        assert_relative_eq!(p[0], 0.25, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.75, max_relative = 1e-12);
    }

    #[test]
    fn popularity_edge_cases() {
        assert!(popularity_logging_policy(0, 5.0).is_err());
        assert_eq!(popularity_logging_policy(1, 5.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn default_toy_log_has_5000_records() {
        let (ds, truth) = generate_toy(&ToyConfig::default()).unwrap();
        assert_eq!(ds.len(), 5000);
        assert!(crate::domain::validate_dataset(&ds).is_empty());
        for r in &ds.records {
            assert_eq!(r.propensity.to_bits(), truth.logging_policy[r.item].to_bits());
        }
    }

    #[test]
    fn all_ones_ctr_always_clicks() {
        let cfg = small_cfg(1);
        let ctr = Matrix::filled(cfg.num_users, cfg.num_items, 1.0);
        let pol = popularity_logging_policy(cfg.num_items, 5.0).unwrap();
        let (ds, _) = simulate_toy_log(&ctr, &pol, &cfg).unwrap();
        assert!(ds.records.iter().all(|r| r.reward == 1));
    }

    #[test]
    fn top_decile_share_matches_geometric_sum() {
        let (ds, truth) = generate_toy(&ToyConfig::default()).unwrap();
        // 10% of 200 items: 1-based indices 181..=200. The weights form a
        // geometric series with ratio r = e^(5/199), so the share of the top
        // 20 is (r^200 - r^180) / (r^200 - 1).
        let r = (5.0f64 / 199.0).exp();
        let closed = (r.powi(200) - r.powi(180)) / (r.powi(200) - 1.0);
        let mass: f64 = truth.logging_policy[180..].iter().sum();
        assert!((mass - closed).abs() < 1e-12, "{mass} vs {closed}");
        assert!((mass - 0.397_603_934).abs() < 1e-8);
        let n = ds.len() as f64;
        let hits = ds.records.iter().filter(|r| r.item >= 180).count() as f64;
        let sd = (n * mass * (1.0 - mass)).sqrt();
        assert!((hits - n * mass).abs() < 3.0 * sd, "{hits} vs {}", n * mass);
    }

    #[test]
    fn mismatched_dims_rejected() {
        let cfg = small_cfg(1);
        let ctr = Matrix::filled(3, 3, 0.5);
        let pol = popularity_logging_policy(cfg.num_items, 5.0).unwrap();
        assert!(simulate_toy_log(&ctr, &pol, &cfg).is_err());
    }

    #[test]
    fn true_value_special_policies() {
        let (_, truth) = generate_toy(&small_cfg(5)).unwrap();
        let (u, i) = (truth.ctr.rows(), truth.ctr.cols());
        let point = TargetPolicy::point_mass(u, i, 7).unwrap();
        assert_relative_eq!(
            true_policy_value(&truth, &point).unwrap(),
            truth.ctr.column_mean(7),
            max_relative = 1e-12
        );
        let uniform = TargetPolicy::uniform(u, i);
        assert_relative_eq!(
            true_policy_value(&truth, &uniform).unwrap(),
            truth.ctr.mean(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn true_value_of_logging_policy_matches_double_loop() {
        let (_, truth) = generate_toy(&ToyConfig::default()).unwrap();
        let mut brute = 0.0;
        for i in 0..truth.ctr.cols() {
            let mut col = 0.0;
            for u in 0..truth.ctr.rows() {
                col += truth.ctr.get(u, i);
            }
            brute += truth.logging_policy[i] * col / truth.ctr.rows() as f64;
        }
        let v = true_policy_value(&truth, &truth.logging_as_policy()).unwrap();
        assert_relative_eq!(v, brute, max_relative = 1e-12);
    }

    #[test]
    fn empirical_exposure_converges_to_logging_policy() {
        let cfg = ToyConfig {
            num_users: 200_000,
            num_items: 200,
            exposures_per_user: 5,
            seed: 9,
            ..ToyConfig::default()
        };
        let ctr = Matrix::filled(cfg.num_users, cfg.num_items, 0.5);
        let pol = popularity_logging_policy(cfg.num_items, cfg.popularity_scale).unwrap();
        let (ds, _) = simulate_toy_log(&ctr, &pol, &cfg).unwrap();
        assert_eq!(ds.len(), 1_000_000);
        let mut counts = vec![0usize; cfg.num_items];
        for r in &ds.records {
            counts[r.item] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&pol)
            .map(|(&c, &p)| (c as f64 / ds.len() as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "tv = {tv}");
    }

    #[test]
    fn logging_reward_is_unbiased_over_seeds() {
        let diffs: Vec<f64> = (0..200)
            .map(|s| {
                let (ds, truth) = generate_toy(&small_cfg(1000 + s)).unwrap();
                let v = true_policy_value(&truth, &truth.logging_as_policy()).unwrap();
                ds.mean_reward() - v
            })
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean diff {mean}, se {se}");
    }

    #[test]
    fn exposure_softmax_hand_case() {
        let p = exposure_distribution(&[1, 3], 1.0, PopularityTransform::LogCount).unwrap();
        assert_relative_eq!(p[0], 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(p[1], 2.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn high_temperature_is_nearly_uniform() {
        // Worst case for c_max / c_min <= 100 is counts (1, 100).
        let counts = [1usize, 100, 50, 7];
        let p = exposure_distribution(&counts, 1000.0, PopularityTransform::LogCount).unwrap();
        let max = p.iter().copied().fold(0.0, f64::max);
        let min = p.iter().copied().fold(1.0, f64::min);
        let bound = (101f64 / 2.0).powf(1.0 / 1000.0);
        assert!(max / min <= bound + 1e-12);
        assert!(max / min < 1.01);
    }

    #[test]
    fn raw_count_softmax_is_stable_for_large_counts() {
        let p = exposure_distribution(&[0, 2000], 1.0, PopularityTransform::RawCount).unwrap();
        assert!(p.iter().all(|x| x.is_finite()));
        assert_relative_eq!(p[1], 1.0, max_relative = 1e-12);
    }

    fn toy_prefs() -> PreferenceMatrix {
        PreferenceMatrix::from_positive_pairs(
            30,
            6,
            (0..30).flat_map(|u| [(u, u % 6), (u, 5)]).collect(),
        )
    }

    #[test]
    fn biased_exposure_is_deterministic_and_consistent() {
        let prefs = toy_prefs();
        let cfg = ExposureSimConfig {
            temperature: 0.8,
            seed: 4,
            exposures_per_user: 7,
            ..Default::default()
        };
        let a = simulate_biased_exposure(&prefs, &cfg).unwrap();
        let b = simulate_biased_exposure(&prefs, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 30 * 7);
        let dist = exposure_distribution(&prefs.item_popularity(), 0.8, cfg.transform).unwrap();
        for r in &a.records {
            assert_eq!(r.propensity.to_bits(), dist[r.item].to_bits());
            assert_eq!(r.reward == 1, prefs.is_positive(r.user, r.item));
        }
    }

    #[test]
    fn biased_exposure_rejects_empty_and_bad_temperature() {
        let empty = PreferenceMatrix::from_positive_pairs(2, 2, vec![]);
        assert!(simulate_biased_exposure(&empty, &ExposureSimConfig::default()).is_err());
        let cfg = ExposureSimConfig {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(simulate_biased_exposure(&toy_prefs(), &cfg).is_err());
    }
}
