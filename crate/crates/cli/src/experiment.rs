//! Single runs: config echo, streamed metrics, checkpoints and final models.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use fedot_core::federation::{Federation, RoundRecord};
use fedot_core::nn::save_model;

use crate::config::{to_toml, ExperimentConfig};
use crate::metrics::{MetricsRow, MetricsSink};

/// Rounds averaged for the reported final accuracy.
pub const SUMMARY_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub rounds: usize,
    /// Mean personalized client accuracy over the last [`SUMMARY_WINDOW`] rounds.
    pub final_client_acc: f64,
    pub final_global_acc: f64,
}

/// Mean of `f` over the last [`SUMMARY_WINDOW`] records.
pub fn tail_mean(records: &[RoundRecord], f: impl Fn(&RoundRecord) -> f64) -> f64 {
    let tail = &records[records.len().saturating_sub(SUMMARY_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

pub fn metrics_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .dir
        .join(format!("metrics.{}", cfg.output.metrics_format.extension()))
}

/// Runs one federation, streaming a row per round to `sink`. Checkpoints go
/// under `checkpoint_dir` when enabled.
pub fn run_into(
    cfg: &ExperimentConfig,
    label: &str,
    sink: &mut MetricsSink,
    checkpoint_dir: Option<&Path>,
) -> Result<(Federation, Vec<RoundRecord>)> {
    let fed_cfg = &cfg.federation;
    let mut fed = Federation::new(fed_cfg.clone()).context("setting up the federation")?;
    let mut records = Vec::with_capacity(fed_cfg.rounds);
    for _ in 0..fed_cfg.rounds {
        let rec = fed.step()?;
        sink.write(&MetricsRow::new(label, &fed_cfg.method, fed_cfg.seed, &rec))
            .with_context(|| format!("writing {}", sink.path().display()))?;
        let every = cfg.output.checkpoint_every;
        if let Some(dir) = checkpoint_dir.filter(|_| every > 0 && rec.round % every == 0) {
            let path = dir.join(format!("round_{:04}.json", rec.round));
            save_model(fed.global(), &path)?;
        }
        records.push(rec);
    }
    Ok((fed, records))
}

/// Executes `cfg` into `cfg.output.dir`.
///
/// The directory receives `config.toml` (the resolved config), the metrics
/// file, optional `checkpoints/`, and `models/` with the final global model
/// and one submodel per client (its latest trained model, or the dispatched
/// one if it never participated).
pub fn run_experiment(cfg: &ExperimentConfig, label: &str) -> Result<RunSummary> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), to_toml(cfg)).context("writing the config echo")?;
    let metrics = metrics_path(cfg);
    let mut sink = MetricsSink::create(&metrics, cfg.output.metrics_format)
        .with_context(|| format!("creating {}", metrics.display()))?;
    let checkpoints = dir.join("checkpoints");
    if cfg.output.checkpoint_every > 0 {
        fs::create_dir_all(&checkpoints)?;
    }
    let (fed, records) = run_into(cfg, label, &mut sink, Some(&checkpoints))?;

    let models = dir.join("models");
    fs::create_dir_all(&models)?;
    save_model(fed.global(), &models.join("global.json"))?;
    for client in fed.clients() {
        let model = match &client.history {
            Some(h) => h.clone(),
            None => fed.personalized(client.id)?,
        };
        save_model(&model, &models.join(format!("client_{:03}.json", client.id)))?;
    }
    Ok(RunSummary {
        dir: dir.clone(),
        metrics,
        rounds: records.len(),
        final_client_acc: tail_mean(&records, |r| r.mean_client_acc),
        final_global_acc: tail_mean(&records, |r| r.global_acc),
    })
}

/// Runs `seeds` consecutive seeds starting at the configured one, each into
/// its own `seed_<s>` subdirectory when more than one seed is requested.
pub fn run_seeds(cfg: &ExperimentConfig, label: &str, seeds: u64) -> Result<Vec<RunSummary>> {
    let first = cfg.federation.seed;
    (first..first + seeds.max(1))
        .map(|seed| {
            let mut one = cfg.clone();
            one.federation.seed = seed;
            if seeds > 1 {
                one.output.dir = cfg.output.dir.join(format!("seed_{seed}"));
            }
            run_experiment(&one, label).with_context(|| format!("seed {seed}"))
        })
        .collect()
}
