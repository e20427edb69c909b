//! Off-policy value estimators: direct method, IPS, self-normalized IPS,
//! Kish effective sample size, and percentile bootstrap.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{EstimateReport, EstimatorKind, LoggedDataset, TargetPolicy};
use crate::error::{Error, Result};
use crate::graph::EmbeddingModel;
use crate::ingest::PreferenceMatrix;
use crate::rng::{self, Domain};
use crate::synthgen::{simulate_biased_exposure, ExposureSimConfig};
use crate::training::sigmoid;

pub const DEFAULT_BOOTSTRAP_RESAMPLES: usize = 50;
/// Largest tolerated fraction of failed bootstrap resamples.
pub const MAX_BOOTSTRAP_FAILURE_RATE: f64 = 0.2;

/// Importance weight `pi(i|u) / b_ui` paired with the logged reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub weight: f64,
    pub reward: f64,
}

/// Weights for every record, optionally clipped at `clip`.
pub fn weighted_samples(
    dataset: &LoggedDataset,
    policy: &TargetPolicy,
    clip: Option<f64>,
) -> Result<Vec<WeightedSample>> {
    if policy.num_users() != dataset.num_users || policy.num_items() != dataset.num_items {
        return Err(Error::DimensionMismatch(format!(
            "policy is {}x{}, log is {}x{}",
            policy.num_users(),
            policy.num_items(),
            dataset.num_users,
            dataset.num_items
        )));
    }
    if let Some(m) = clip {
        if !(m > 0.0) {
            return Err(Error::config("clip", "must be positive"));
        }
    }
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(index, r)| {
            if !(r.propensity > 0.0) {
                return Err(Error::ZeroPropensity { index });
            }
            let w = policy.prob(r.user, r.item) / r.propensity;
            Ok(WeightedSample {
                weight: clip.map_or(w, |m| w.min(m)),
                reward: r.reward as f64,
            })
        })
        .collect()
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq == 0.0 {
        return Err(Error::NoOverlap);
    }
    Ok(sum * sum / sq)
}

fn ips_value(samples: &[WeightedSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot estimate from an empty log".into()));
    }
    Ok(samples.iter().map(|s| s.weight * s.reward).sum::<f64>() / samples.len() as f64)
}

fn snips_value(samples: &[WeightedSample]) -> Result<f64> {
    let den: f64 = samples.iter().map(|s| s.weight).sum();
    if !(den > 0.0) {
        return Err(Error::NoOverlap);
    }
    Ok(samples.iter().map(|s| s.weight * s.reward).sum::<f64>() / den)
}

fn weight_diagnostics(samples: &[WeightedSample]) -> (f64, f64) {
    let weights: Vec<f64> = samples.iter().map(|s| s.weight).collect();
    let ess = effective_sample_size(&weights).unwrap_or(0.0);
    let max = weights.iter().copied().fold(0.0, f64::max);
    (ess, max)
}

/// `(1/n) sum_k w_k r_k`.
pub fn ips_estimate(dataset: &LoggedDataset, policy: &TargetPolicy, clip: Option<f64>) -> Result<EstimateReport> {
    let samples = weighted_samples(dataset, policy, clip)?;
    let value = ips_value(&samples)?;
    let (ess, max_weight) = weight_diagnostics(&samples);
    Ok(EstimateReport::point(EstimatorKind::Ips, value, ess, max_weight, samples.len(), clip))
}

/// `sum_k w_k r_k / sum_k w_k`.
pub fn snips_estimate(dataset: &LoggedDataset, policy: &TargetPolicy, clip: Option<f64>) -> Result<EstimateReport> {
    let samples = weighted_samples(dataset, policy, clip)?;
    let value = snips_value(&samples)?;
    let (ess, max_weight) = weight_diagnostics(&samples);
    Ok(EstimateReport::point(EstimatorKind::Snips, value, ess, max_weight, samples.len(), clip))
}

/// Per-user expected predicted reward `sum_i pi(i|u) sigmoid(score_ui)`.
pub fn dm_user_values(policy: &TargetPolicy, reward_model: &EmbeddingModel) -> Result<Vec<f64>> {
    if policy.num_users() != reward_model.num_users() || policy.num_items() != reward_model.num_items() {
        return Err(Error::DimensionMismatch(
            "policy and reward model shapes differ".into(),
        ));
    }
    let (eu, ei) = reward_model.final_embeddings()?;
    Ok((0..policy.num_users())
        .into_par_iter()
        .map(|u| {
            let e = eu.row(u);
            policy
                .row_dense(u)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| p * sigmoid(crate::graph::dot(e, ei.row(i))))
                .sum()
        })
        .collect())
}

/// Direct method: mean over users of the reward model's expected reward
/// under the policy. `dataset` only supplies the record count.
pub fn dm_estimate(dataset: &LoggedDataset, policy: &TargetPolicy, reward_model: &EmbeddingModel) -> Result<EstimateReport> {
    let per_user = dm_user_values(policy, reward_model)?;
    let value = per_user.iter().sum::<f64>() / per_user.len() as f64;
    Ok(EstimateReport::point(EstimatorKind::Dm, value, 0.0, 0.0, dataset.len(), None))
}

/// What a bootstrap pass resamples and re-estimates.
#[derive(Debug, Clone, Copy)]
pub enum BootstrapTarget<'a> {
    /// IPS or SNIPS over resampled records.
    Weighted(EstimatorKind),
    /// Direct method over resampled users; the reward model is fixed, so
    /// record resampling would leave it unchanged.
    Direct(&'a EmbeddingModel),
}

/// Point estimate plus bootstrap diagnostics and the raw resample values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapOutcome {
    pub report: EstimateReport,
    /// Estimates of the successful resamples, in resample order.
    pub samples: Vec<f64>,
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn bootstrap_values(
    n: usize,
    resamples: usize,
    seed: u64,
    eval: impl Fn(&[usize]) -> Result<f64> + Sync,
) -> Vec<Option<f64>> {
    (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::substream(seed, Domain::Bootstrap, b as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            eval(&idx).ok()
        })
        .collect()
}

/// Resamples with replacement `resamples` times and attaches mean, standard
/// deviation (ddof = 1) and the 2.5/97.5 percentile interval to the point
/// estimate. Failed resamples are skipped; more than 20% failing is an error.
pub fn bootstrap(
    dataset: &LoggedDataset,
    policy: &TargetPolicy,
    target: BootstrapTarget<'_>,
    resamples: usize,
    seed: u64,
    clip: Option<f64>,
) -> Result<BootstrapOutcome> {
    if resamples < 2 {
        return Err(Error::config("bootstrap", "needs at least 2 resamples"));
    }
    let (mut report, values) = match target {
        BootstrapTarget::Weighted(kind) => {
            let samples = weighted_samples(dataset, policy, clip)?;
            let point: fn(&[WeightedSample]) -> Result<f64> = match kind {
                EstimatorKind::Ips => ips_value,
                EstimatorKind::Snips => snips_value,
                EstimatorKind::Dm => {
                    return Err(Error::InvalidInput(
                        "direct-method bootstrap needs a reward model".into(),
                    ))
                }
            };
            let report = match kind {
                EstimatorKind::Ips => ips_estimate(dataset, policy, clip)?,
                _ => snips_estimate(dataset, policy, clip)?,
            };
            let values = bootstrap_values(samples.len(), resamples, seed, |idx| {
                let draw: Vec<WeightedSample> = idx.iter().map(|&k| samples[k]).collect();
                point(&draw)
            });
            (report, values)
        }
        BootstrapTarget::Direct(model) => {
            let per_user = dm_user_values(policy, model)?;
            let report = dm_estimate(dataset, policy, model)?;
            let values = bootstrap_values(per_user.len(), resamples, seed, |idx| {
                Ok(idx.iter().map(|&u| per_user[u]).sum::<f64>() / idx.len() as f64)
            });
            (report, values)
        }
    };
    let failures = values.iter().filter(|v| v.is_none()).count();
    if failures as f64 > MAX_BOOTSTRAP_FAILURE_RATE * resamples as f64 || resamples - failures < 2 {
        return Err(Error::BootstrapFailures {
            failed: failures,
            total: resamples,
        });
    }
    let samples: Vec<f64> = values.into_iter().flatten().collect();
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    report.bootstrap_mean = mean;
    report.bootstrap_std = var.sqrt();
    report.ci_low = percentile(&sorted, 2.5);
    report.ci_high = percentile(&sorted, 97.5);
    report.bootstrap_resamples = resamples;
    report.bootstrap_failures = failures;
    Ok(BootstrapOutcome { report, samples })
}

/// `resample,value` table of raw bootstrap estimates.
pub fn write_bootstrap_samples_csv<W: std::io::Write>(samples: &[f64], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["resample", "value"])?;
    for (b, v) in samples.iter().enumerate() {
        w.write_record([b.to_string(), crate::formats::fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of a temperature sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub snips: f64,
    pub ess: f64,
    pub n: usize,
}

/// Re-logs `prefs` at each temperature and evaluates `policy` with SNIPS.
/// Row `j` uses a seed derived from `(base.seed, j)`, so repeated
/// temperatures give independent logs.
pub fn temperature_sweep(
    prefs: &PreferenceMatrix,
    temperatures: &[f64],
    policy: &TargetPolicy,
    base: &ExposureSimConfig,
    clip: Option<f64>,
) -> Result<Vec<SweepRow>> {
    if let Some(&t) = temperatures.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::config("temperatures", format!("{t} is not positive")));
    }
    temperatures
        .iter()
        .enumerate()
        .map(|(j, &temperature)| {
            let cfg = ExposureSimConfig {
                temperature,
                seed: rng::derive_seed(base.seed, Domain::Sweep, j as u64),
                ..base.clone()
            };
            let log = simulate_biased_exposure(prefs, &cfg)?;
            let report = snips_estimate(&log, policy, clip)?;
            Ok(SweepRow {
                temperature,
                snips: report.value,
                ess: report.ess,
                n: log.len(),
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["temperature", "snips", "ess", "n"])?;
    for r in rows {
        w.write_record([
            crate::formats::fmt_f64(r.temperature),
            crate::formats::fmt_f64(r.snips),
            crate::formats::fmt_f64(r.ess),
            r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{LoggedInteraction, Matrix};
    use crate::graph::BipartiteGraph;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn log(records: &[(usize, usize, u8, f64)], u: usize, i: usize) -> LoggedDataset {
        LoggedDataset::new(
            u,
            i,
            records
                .iter()
                .map(|&(a, b, r, p)| LoggedInteraction::new(a, b, r, p))
                .collect(),
        )
    }

    #[test]
    fn ips_with_logging_policy_is_mean_reward() {
        let ds = log(&[(0, 0, 1, 0.25), (1, 1, 0, 0.75), (0, 1, 1, 0.75)], 2, 2);
        let pol = TargetPolicy::shared(2, vec![0.25, 0.75]).unwrap();
        let r = ips_estimate(&ds, &pol, None).unwrap();
        assert_relative_eq!(r.value, 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(r.ess, 3.0, max_relative = 1e-15);
    }

    #[test]
    fn ips_zero_rewards() {
        let ds = log(&[(0, 0, 0, 0.1), (0, 1, 0, 0.9)], 1, 2);
        assert_eq!(ips_estimate(&ds, &TargetPolicy::uniform(1, 2), None).unwrap().value, 0.0);
    }

    #[test]
    fn zero_propensity_errors() {
        let ds = log(&[(0, 0, 1, 0.5), (0, 1, 1, 0.0)], 1, 2);
        let err = ips_estimate(&ds, &TargetPolicy::uniform(1, 2), None).unwrap_err();
        assert!(matches!(err, Error::ZeroPropensity { index: 1 }));
    }

    #[test]
    fn snips_hand_cases() {
        // Weights 1 and 3 via pi/b with b = 0.5 and 1/6.
        let pol = TargetPolicy::shared(1, vec![0.5, 0.5]).unwrap();
        let ds = log(&[(0, 0, 0, 0.5), (0, 1, 1, 1.0 / 6.0)], 1, 2);
        let r = snips_estimate(&ds, &pol, None).unwrap();
        assert_relative_eq!(r.value, 0.75, max_relative = 1e-15);
        assert_relative_eq!(r.max_weight, 3.0, max_relative = 1e-15);
        let ones = log(&[(0, 0, 1, 0.01), (0, 1, 1, 0.9)], 1, 2);
        assert_relative_eq!(snips_estimate(&ones, &pol, None).unwrap().value, 1.0, max_relative = 1e-15);
        let equal = log(&[(0, 0, 1, 0.5), (0, 0, 0, 0.5), (0, 0, 0, 0.5)], 1, 2);
        assert_relative_eq!(snips_estimate(&equal, &pol, None).unwrap().value, 1.0 / 3.0);
    }

    #[test]
    fn snips_without_overlap_errors() {
        let pol = TargetPolicy::point_mass(1, 2, 1).unwrap();
        let ds = log(&[(0, 0, 1, 0.5)], 1, 2);
        assert!(matches!(snips_estimate(&ds, &pol, None), Err(Error::NoOverlap)));
    }

    #[test]
    fn clipping_caps_weights() {
        let pol = TargetPolicy::uniform(1, 2);
        let ds = log(&[(0, 0, 1, 0.001)], 1, 2);
        let r = ips_estimate(&ds, &pol, Some(100.0)).unwrap();
        assert_eq!(r.max_weight, 100.0);
        assert_eq!(r.clip, Some(100.0));
    }

    #[test]
    fn ess_hand_cases() {
        assert_eq!(effective_sample_size(&[2.0; 7]).unwrap(), 7.0);
        assert_eq!(effective_sample_size(&[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_relative_eq!(effective_sample_size(&[1.0, 3.0]).unwrap(), 1.6, max_relative = 1e-15);
        assert!(effective_sample_size(&[0.0, 0.0]).is_err());
    }

    fn constant_model(u: usize, i: usize, value: f64) -> (EmbeddingModel, BipartiteGraph) {
        let mut m = EmbeddingModel::from_tables(Matrix::filled(u, 1, value), Matrix::filled(i, 1, value), 0).unwrap();
        let g = BipartiteGraph::from_edges(u, i, []).unwrap();
        m.propagate(&g).unwrap();
        (m, g)
    }

    #[test]
    fn dm_zero_scores_is_half() {
        let (m, _) = constant_model(3, 4, 0.0);
        let ds = log(&[(0, 0, 1, 0.5)], 3, 4);
        for pol in [TargetPolicy::uniform(3, 4), TargetPolicy::point_mass(3, 4, 2).unwrap()] {
            assert_relative_eq!(dm_estimate(&ds, &pol, &m).unwrap().value, 0.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn dm_matches_brute_force() {
        let mut m = EmbeddingModel::random(3, 4, 3, 1, 17);
        let g = BipartiteGraph::from_edges(3, 4, [(0, 1), (1, 1), (2, 3), (2, 0)]).unwrap();
        m.propagate(&g).unwrap();
        let probs = Matrix::from_vec(
            3,
            4,
            vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.0, 1.0, 0.0, 0.25, 0.25, 0.25, 0.25],
        )
        .unwrap();
        let pol = TargetPolicy::dense(probs.clone()).unwrap();
        let mut brute = 0.0;
        for u in 0..3 {
            for i in 0..4 {
                let s = m.score(u, i).unwrap();
                brute += probs.get(u, i) / (1.0 + (-s).exp());
            }
        }
        brute /= 3.0;
        let ds = log(&[(0, 0, 1, 0.5)], 3, 4);
        let v = dm_estimate(&ds, &pol, &m).unwrap().value;
        assert!((v - brute).abs() < 1e-12);
        // point mass collapses to a column mean
        let point = TargetPolicy::point_mass(3, 4, 1).unwrap();
        let col: f64 = (0..3).map(|u| sigmoid(m.score(u, 1).unwrap())).sum::<f64>() / 3.0;
        assert!((dm_estimate(&ds, &point, &m).unwrap().value - col).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_of_identical_records_has_zero_std() {
        let ds = log(&[(0, 1, 1, 0.2); 30], 1, 2);
        let pol = TargetPolicy::uniform(1, 2);
        for kind in [EstimatorKind::Ips, EstimatorKind::Snips] {
            let out = bootstrap(&ds, &pol, BootstrapTarget::Weighted(kind), 50, 3, None).unwrap();
            assert_eq!(out.samples.len(), 50);
            assert_eq!(out.report.bootstrap_std, 0.0);
            assert_eq!(out.report.bootstrap_resamples, 50);
        }
    }

    #[test]
    fn bootstrap_validates_and_is_deterministic() {
        let ds = log(&[(0, 0, 1, 0.2), (0, 1, 0, 0.8), (0, 1, 1, 0.8), (0, 0, 0, 0.2)], 1, 2);
        let pol = TargetPolicy::shared(1, vec![0.7, 0.3]).unwrap();
        let t = BootstrapTarget::Weighted(EstimatorKind::Snips);
        assert!(bootstrap(&ds, &pol, t, 1, 0, None).is_err());
        let a = bootstrap(&ds, &pol, t, 40, 9, None).unwrap();
        let b = bootstrap(&ds, &pol, t, 40, 9, None).unwrap();
        assert_eq!(a, b);
        assert!(a.report.ci_low <= a.report.bootstrap_mean);
        assert!(a.report.bootstrap_mean <= a.report.ci_high);
        assert!(bootstrap(&ds, &pol, t, 2, 9, None).is_ok());
    }

    #[test]
    fn bootstrap_fails_when_overlap_is_rare() {
        // One record with positive weight in 40: most resamples miss it.
        let mut recs = vec![(0, 0, 1, 0.5)];
        recs.extend(std::iter::repeat((0, 1, 0, 0.5)).take(39));
        let ds = log(&recs, 1, 2);
        let pol = TargetPolicy::point_mass(1, 2, 0).unwrap();
        let err = bootstrap(&ds, &pol, BootstrapTarget::Weighted(EstimatorKind::Snips), 50, 1, None).unwrap_err();
        assert!(matches!(err, Error::BootstrapFailures { .. }));
    }

    #[test]
    fn dm_bootstrap_resamples_users() {
        let mut m = EmbeddingModel::random(20, 5, 2, 0, 4);
        m.propagate(&BipartiteGraph::from_edges(20, 5, []).unwrap()).unwrap();
        let ds = log(&[(0, 0, 1, 0.5)], 20, 5);
        let out = bootstrap(&ds, &TargetPolicy::uniform(20, 5), BootstrapTarget::Direct(&m), 30, 2, None).unwrap();
        assert_eq!(out.report.estimator, EstimatorKind::Dm);
        assert!(out.report.bootstrap_std > 0.0);
    }

    #[test]
    fn percentile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert_eq!(percentile(&xs, 50.0), 3.0);
        assert_relative_eq!(percentile(&xs, 2.5), 1.1, max_relative = 1e-12);
        assert_relative_eq!(percentile(&xs, 97.5), 4.9, max_relative = 1e-12);
    }

    fn sweep_prefs() -> PreferenceMatrix {
        PreferenceMatrix::from_positive_pairs(
            40,
            8,
            (0..40).flat_map(|u: usize| (0..=(u % 8)).map(move |i| (u, i))).collect(),
        )
    }

    #[test]
    fn sweep_shapes_and_seeds() {
        let prefs = sweep_prefs();
        let pol = TargetPolicy::uniform(40, 8);
        let base = ExposureSimConfig {
            exposures_per_user: 5,
            seed: 3,
            ..Default::default()
        };
        let one = temperature_sweep(&prefs, &[1.0], &pol, &base, None).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].n, 200);
        let temps = [0.5, 0.8, 1.0, 1.2, 1.5, 2.0];
        let rows = temperature_sweep(&prefs, &temps, &pol, &base, None).unwrap();
        assert_eq!(rows.len(), 6);
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("temperature,snips,ess,n\n"));
        let repeated = temperature_sweep(&prefs, &[1.0, 1.0], &pol, &base, None).unwrap();
        assert_ne!(repeated[0].snips, repeated[1].snips);
        assert!(temperature_sweep(&prefs, &[1.0, 0.0], &pol, &base, None).is_err());
    }

    #[test]
    fn hot_logging_makes_weights_constant() {
        let prefs = sweep_prefs();
        let pol = TargetPolicy::uniform(40, 8);
        let base = ExposureSimConfig {
            exposures_per_user: 50,
            ..Default::default()
        };
        let rows = temperature_sweep(&prefs, &[0.5, 1e6], &pol, &base, None).unwrap();
        let ratio_cold = rows[0].ess / rows[0].n as f64;
        let ratio_hot = rows[1].ess / rows[1].n as f64;
        assert!(ratio_hot > 1.0 - 1e-9, "{ratio_hot}");
        assert!(ratio_cold < ratio_hot);
    }

    fn weights_and_rewards() -> impl Strategy<Value = Vec<(f64, u8)>> {
        prop::collection::vec((0.0f64..50.0, 0u8..=1), 1..40)
    }

    fn samples_of(v: &[(f64, u8)]) -> Vec<WeightedSample> {
        v.iter()
            .map(|&(w, r)| WeightedSample {
                weight: w,
                reward: r as f64,
            })
            .collect()
    }

    proptest! {
        #[test]
        fn snips_is_a_weighted_average(v in weights_and_rewards()) {
            let s = samples_of(&v);
            if let Ok(x) = snips_value(&s) {
                let lo = s.iter().filter(|x| x.weight > 0.0).map(|x| x.reward).fold(f64::INFINITY, f64::min);
                let hi = s.iter().filter(|x| x.weight > 0.0).map(|x| x.reward).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }

        #[test]
        fn snips_scale_invariant_ips_scales(v in weights_and_rewards(), c in 0.01f64..100.0) {
            let s = samples_of(&v);
            let scaled: Vec<WeightedSample> = s.iter().map(|x| WeightedSample { weight: x.weight * c, ..*x }).collect();
            if let (Ok(a), Ok(b)) = (snips_value(&s), snips_value(&scaled)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let (a, b) = (ips_value(&s).unwrap(), ips_value(&scaled).unwrap());
            prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
