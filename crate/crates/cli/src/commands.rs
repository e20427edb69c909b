//! Subcommand implementations. Each writes fixed file names into the output
//! directory and reports which inputs it read and which files it wrote.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Subcommand;
use ipsrec::estimators::{bootstrap, write_bootstrap_samples_csv, write_sweep_csv, BootstrapTarget};
use ipsrec::formats::{load_dataset, save_dataset, write_json, write_matrix_bin};
use ipsrec::graph::extract_policy;
use ipsrec::ingest::{binarize, descriptive_stats, parse_movielens, preference_stats, IdRemap, PreferenceMatrix};
use ipsrec::synthgen::{generate_toy, simulate_biased_exposure, true_policy_value};
use ipsrec::training::{train, write_epoch_log, TrainConfig};
use ipsrec::{BipartiteGraph, EmbeddingModel, EstimatorKind, LoggedDataset, TargetPolicy};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{digest_input, digest_output, RunManifest};

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name")]
pub enum Command {
    /// Draw a toy log with its ground truth and descriptive statistics.
    GenerateToy,
    /// Binarize MovieLens ratings and write preference and statistics tables.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// `100k` (tab separated) or `1m` (`::` separated).
        #[arg(long)]
        format: Option<String>,
        /// Ratings at or above this value count as clicks.
        #[arg(long)]
        threshold: Option<u8>,
    },
    /// Re-log a preference table through the popularity-biased exposure policy.
    Simulate {
        #[arg(long)]
        prefs: PathBuf,
        #[arg(long)]
        temperature: Option<f64>,
    },
    /// Train a ranker and write the checkpoint and epoch log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Held-out log; without it the data is split by `eval_fraction`.
        #[arg(long)]
        eval_data: Option<PathBuf>,
    },
    /// Estimate a policy's value from a log.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint the target policy is extracted from. Without it the
        /// `policy` key must be `uniform`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Checkpoint of a BCE-trained reward model, required for `dm`.
        #[arg(long)]
        reward_model: Option<PathBuf>,
        /// Log whose clicked pairs are masked out of the extracted policy.
        #[arg(long)]
        exclude: Option<PathBuf>,
        /// Comma-separated estimator names.
        #[arg(long)]
        estimators: Option<String>,
        #[arg(long)]
        bootstrap: Option<usize>,
        /// `softmax:<t>`, `topk:<k>` or `uniform`.
        #[arg(long)]
        policy: Option<String>,
    },
    /// SNIPS of a fixed policy over logs simulated at several temperatures.
    Sweep {
        #[arg(long)]
        prefs: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Comma-separated temperatures.
        #[arg(long)]
        temperatures: Option<String>,
        #[arg(long)]
        policy: Option<String>,
    },
    /// Per-item and per-user statistics of a log.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(text: &str, field: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::usage(field, format!("cannot parse `{}`", s.trim())))
        })
        .collect()
}

impl Command {
    /// Folds command-line flags into the resolved config.
    pub fn apply_flags(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        match self {
            Command::Ingest { format, threshold, .. } => {
                if let Some(f) = format {
                    cfg.format = f.clone();
                }
                if let Some(t) = threshold {
                    cfg.threshold = *t;
                }
            }
            Command::Simulate { temperature: Some(t), .. } => cfg.temperature = *t,
            Command::Evaluate {
                estimators,
                bootstrap,
                policy,
                ..
            } => {
                if let Some(e) = estimators {
                    cfg.estimators = e.split(',').map(|s| s.trim().to_string()).collect();
                }
                if let Some(b) = bootstrap {
                    cfg.bootstrap_resamples = *b;
                }
                if let Some(p) = policy {
                    cfg.policy = p.clone();
                }
            }
            Command::Sweep {
                temperatures, policy, ..
            } => {
                if let Some(t) = temperatures {
                    cfg.temperatures = parse_list(t, "temperatures")?;
                }
                if let Some(p) = policy {
                    cfg.policy = p.clone();
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateToy => "generate-toy",
            Command::Ingest { .. } => "ingest",
            Command::Simulate { .. } => "simulate",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Sweep { .. } => "sweep",
            Command::Stats { .. } => "stats",
        }
    }
}

/// Files a command read and wrote (outputs relative to the out dir).
#[derive(Debug, Default)]
pub struct RunFiles {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
}

impl RunFiles {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
        let side = ipsrec::formats::sidecar_path(p);
        if side.exists() {
            self.inputs.push(side);
        }
    }

    fn out(&mut self, name: &str) -> String {
        self.outputs.push(name.to_string());
        name.to_string()
    }

    fn dataset(&mut self, dir: &Path, name: &str, ds: &LoggedDataset, gt: Option<&str>) -> Result<(), CliError> {
        save_dataset(ds, &dir.join(name), gt)?;
        self.out(name);
        self.out(&format!("{name}.json"));
        Ok(())
    }

    fn stats(&mut self, dir: &Path, stats: &ipsrec::ingest::DescriptiveStats) -> Result<(), CliError> {
        for p in stats.write_all(dir)? {
            self.out(&p.file_name().unwrap().to_string_lossy());
        }
        Ok(())
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(ipsrec::Error::from)?))
}

fn load_log(path: &Path) -> Result<LoggedDataset, CliError> {
    let (ds, _) = load_dataset(path)?;
    ds.ensure_valid()?;
    Ok(ds)
}

fn load_prefs(path: &Path) -> Result<PreferenceMatrix, CliError> {
    Ok(PreferenceMatrix::read_csv(File::open(path).map_err(ipsrec::Error::from)?)?)
}

fn clicks_of(path: &Path, files: &mut RunFiles) -> Result<Vec<Vec<usize>>, CliError> {
    files.input(path);
    Ok(load_log(path)?.positives_by_user())
}

/// Target policy named by `cfg.policy`, extracted from `model` unless it is
/// `uniform`. Returns the policy with its label.
fn resolve_policy(
    cfg: &RunConfig,
    model: Option<&Path>,
    shape: (usize, usize),
    exclude: Option<&[Vec<usize>]>,
    files: &mut RunFiles,
) -> Result<(TargetPolicy, String), CliError> {
    if cfg.policy == "uniform" {
        return Ok((TargetPolicy::uniform(shape.0, shape.1), "uniform".into()));
    }
    let mode = cfg.policy_mode(&cfg.policy, "policy")?;
    let path = model.ok_or_else(|| CliError::usage("model", format!("policy `{}` needs --model", cfg.policy)))?;
    let m = load_model(path, files)?;
    if (m.num_users(), m.num_items()) != shape {
        return Err(ipsrec::Error::DimensionMismatch(format!(
            "model is {}x{}, data is {}x{}",
            m.num_users(),
            m.num_items(),
            shape.0,
            shape.1
        ))
        .into());
    }
    Ok((extract_policy(&m, mode, exclude)?, mode.to_string()))
}

/// Graph of the training split recorded next to a checkpoint.
fn training_graph(ckpt: &Path, shape: (usize, usize), files: &mut RunFiles) -> Result<BipartiteGraph, CliError> {
    let meta: ModelMeta = ipsrec::formats::read_json(&ipsrec::formats::sidecar_path(ckpt))?;
    let train_path = ckpt.with_file_name(&meta.train_log);
    files.input(&train_path);
    let ds = load_log(&train_path)?;
    if (ds.num_users, ds.num_items) != shape {
        return Err(ipsrec::Error::DimensionMismatch("training log shape differs from the model".into()).into());
    }
    Ok(BipartiteGraph::from_clicks(&ds))
}

/// JSON sidecar of a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub train_config: TrainConfig,
    pub best_epoch: Option<usize>,
    /// Training log, sitting next to the checkpoint.
    pub train_log: String,
}

/// Loads a checkpoint and propagates it over its training graph.
pub fn load_model(ckpt: &Path, files: &mut RunFiles) -> Result<EmbeddingModel, CliError> {
    files.input(ckpt);
    let mut m = EmbeddingModel::load(ckpt)?;
    let g = training_graph(ckpt, (m.num_users(), m.num_items()), files)?;
    m.propagate(&g)?;
    Ok(m)
}

pub fn execute(cmd: &Command, cfg: &RunConfig, dir: &Path) -> Result<RunFiles, CliError> {
    fs::create_dir_all(dir).map_err(ipsrec::Error::from)?;
    let mut files = RunFiles::default();
    match cmd {
        Command::GenerateToy => {
            let toy = cfg.toy()?;
            let (log, truth) = generate_toy(&toy)?;
            write_matrix_bin(&truth.ctr, create(dir, files.out("ctr.bin").as_str())?)?;
            files.dataset(dir, "log.csv", &log, Some("ctr.bin"))?;
            let uniform = TargetPolicy::uniform(toy.num_users, toy.num_items);
            let gt = serde_json::json!({
                "config": toy,
                "logging_policy": truth.logging_policy,
                "uniform_policy_value": true_policy_value(&truth, &uniform)?,
                "mean_ctr": truth.ctr.mean(),
            });
            write_json(&gt, &dir.join(files.out("ground_truth.json")))?;
            files.stats(dir, &descriptive_stats(&log))?;
        }
        Command::Ingest { input, .. } => {
            files.input(input);
            let file = File::open(input).map_err(ipsrec::Error::from)?;
            let ratings = parse_movielens(std::io::BufReader::new(file), cfg.movielens_format()?)?;
            let bin = binarize(&ratings, cfg.threshold);
            if bin.prefs.num_positives() == 0 {
                log::warn!(
                    "threshold {} leaves zero positive interactions out of {} ratings",
                    cfg.threshold,
                    ratings.len()
                );
            }
            bin.prefs.write_csv(create(dir, &files.out("preferences.csv"))?)?;
            IdRemap::write_csv(&bin.remap.users, create(dir, &files.out("user_remap.csv"))?)?;
            IdRemap::write_csv(&bin.remap.items, create(dir, &files.out("item_remap.csv"))?)?;
            files.stats(dir, &preference_stats(&bin.prefs))?;
        }
        Command::Simulate { prefs, .. } => {
            files.input(prefs);
            let p = load_prefs(prefs)?;
            let log = simulate_biased_exposure(&p, &cfg.exposure()?)?;
            files.dataset(dir, "log.csv", &log, None)?;
            files.stats(dir, &descriptive_stats(&log))?;
        }
        Command::Train { data, eval_data } => {
            let tc = cfg.train()?;
            files.input(data);
            let full = load_log(data)?;
            let (tr, ev) = match eval_data {
                Some(p) => {
                    files.input(p);
                    (full, load_log(p)?)
                }
                None => full.split(cfg.eval_fraction, cfg.seed)?,
            };
            files.dataset(dir, "train_split.csv", &tr, None)?;
            files.dataset(dir, "eval_split.csv", &ev, None)?;
            let graph = BipartiteGraph::from_clicks(&tr);
            let out = train(&tr, &graph, &tc, &ev)?;
            out.model.save(&dir.join(files.out("model.ckpt")))?;
            let meta = ModelMeta {
                train_config: tc,
                best_epoch: out.best_epoch,
                train_log: "train_split.csv".into(),
            };
            write_json(&meta, &dir.join(files.out("model.ckpt.json")))?;
            write_epoch_log(&out.log, create(dir, &files.out("epoch_log.csv"))?)?;
        }
        Command::Evaluate {
            data,
            model,
            reward_model,
            exclude,
            ..
        } => {
            let kinds = cfg.estimator_kinds()?;
            files.input(data);
            let log = load_log(data)?;
            let masked = match exclude {
                Some(p) if cfg.exclude_train => Some(clicks_of(p, &mut files)?),
                _ => None,
            };
            let (policy, label) = resolve_policy(
                cfg,
                model.as_deref(),
                (log.num_users, log.num_items),
                masked.as_deref(),
                &mut files,
            )?;
            let reward = match (kinds.contains(&EstimatorKind::Dm), reward_model) {
                (true, Some(p)) => Some(load_model(p, &mut files)?),
                (true, None) => return Err(CliError::usage("reward_model", "estimator `dm` needs --reward-model")),
                _ => None,
            };
            for kind in kinds {
                let target = match kind {
                    EstimatorKind::Dm => BootstrapTarget::Direct(reward.as_ref().unwrap()),
                    k => BootstrapTarget::Weighted(k),
                };
                let mut out =
                    bootstrap(&log, &policy, target, cfg.bootstrap_resamples, cfg.seed, cfg.estimator_clip)?;
                out.report.policy = Some(label.clone());
                write_json(&out.report, &dir.join(files.out(&format!("report_{}.json", kind.name()))))?;
                let name = format!("bootstrap_{}.csv", kind.name());
                write_bootstrap_samples_csv(&out.samples, create(dir, &files.out(&name))?)?;
            }
        }
        Command::Sweep { prefs, model, .. } => {
            let temps = cfg.sweep_temperatures()?;
            files.input(prefs);
            let p = load_prefs(prefs)?;
            let (policy, _) = resolve_policy(cfg, model.as_deref(), (p.num_users, p.num_items), None, &mut files)?;
            let rows = ipsrec::estimators::temperature_sweep(&p, &temps, &policy, &cfg.exposure()?, cfg.estimator_clip)?;
            write_sweep_csv(&rows, create(dir, &files.out("sweep.csv"))?)?;
        }
        Command::Stats { data } => {
            files.input(data);
            files.stats(dir, &descriptive_stats(&load_log(data)?))?;
        }
    }
    let mut seen = std::collections::HashSet::new();
    files.inputs.retain(|p| seen.insert(p.clone()));
    Ok(files)
}

/// Runs `cmd` on a dedicated thread pool and writes its manifest.
pub fn run_recorded(
    cmd: &Command,
    cfg: &RunConfig,
    dir: &Path,
    threads: Option<usize>,
) -> Result<RunManifest, CliError> {
    let started = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::usage("threads", e.to_string()))?;
    let files = pool.install(|| execute(cmd, cfg, dir))?;
    let inputs = files
        .inputs
        .iter()
        .map(|p| digest_input(p))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs = files
        .outputs
        .iter()
        .map(|n| digest_output(dir, n))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: cmd.clone(),
        config: cfg.clone(),
        seed: cfg.seed,
        threads,
        inputs,
        outputs,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Re-runs a recorded command into `dir` and checks that every input still
/// matches and every output reproduces its data hash.
pub fn replay(manifest_path: &Path, dir: &Path, threads: Option<usize>) -> Result<RunManifest, CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    for input in &recorded.inputs {
        let now = digest_input(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(CliError::ReplayMismatch(format!("input {} changed", input.path.display())));
        }
    }
    let fresh = run_recorded(&recorded.command, &recorded.config, dir, threads.or(recorded.threads))?;
    let diffs = recorded.data_differences(&fresh);
    if !diffs.is_empty() {
        return Err(CliError::ReplayMismatch(diffs.join(", ")));
    }
    Ok(fresh)
}
