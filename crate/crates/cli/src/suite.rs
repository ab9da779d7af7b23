//! Preset experiment matrices run at desk scale on synthetic data.

use std::fmt::Write as _;
use std::fs;

use anyhow::{Context, Result};
use clap::ValueEnum;
use fedot_core::alignment::ExtractStrategy;
use fedot_core::data::PartitionScheme;
use fedot_core::federation::{FederationConfig, MethodSpec, RateMode};
use serde::Serialize;

use crate::config::{feature_shift_task, to_toml, ExperimentConfig};
use crate::experiment::{run_into, tail_mean};
use crate::metrics::MetricsSink;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Full method against each component removed.
    Ablation,
    /// Low, medium, high and dynamically resampled pruning rates.
    Sparsity,
    /// Pathological and Dirichlet label skew of varying strength.
    Heterogeneity,
    /// Historical models against pruning heuristics as the dispatch reference.
    Proxy,
}

/// Rounds between rate redraws in the dynamic sparsity cell.
pub const DYNAMIC_RESAMPLE_EVERY: usize = 10;

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub config: FederationConfig,
}

fn cell(label: &str, config: FederationConfig) -> Cell {
    Cell {
        label: label.to_owned(),
        config,
    }
}

/// The cells of `suite`, derived from `base`.
pub fn suite_cells(suite: Suite, base: &FederationConfig) -> Vec<Cell> {
    let with_method = |task: &FederationConfig, method| FederationConfig {
        method,
        ..task.clone()
    };
    let with_rates = |rates: &[f64], rate_mode| FederationConfig {
        rate_set: rates.to_vec(),
        rate_mode,
        ..base.clone()
    };
    let with_partition = |partition| FederationConfig {
        partition,
        ..base.clone()
    };
    let medium = [0.0, 0.25, 0.5, 0.75];
    match suite {
        Suite::Ablation => {
            let task = feature_shift_task(base);
            vec![
                cell("full", with_method(&task, MethodSpec::full())),
                cell("w/o OTP", with_method(&task, MethodSpec::without_otp())),
                cell("w/o SAR", with_method(&task, MethodSpec::without_sar())),
                cell("w/o OTA", with_method(&task, MethodSpec::without_ota())),
            ]
        }
        Suite::Proxy => {
            let task = feature_shift_task(base);
            vec![
                cell("Historical", with_method(&task, MethodSpec::full())),
                cell(
                    "Fixed-Pos.",
                    with_method(&task, MethodSpec::with_proxy(ExtractStrategy::FixedPosition)),
                ),
                cell(
                    "Magnitude",
                    with_method(&task, MethodSpec::with_proxy(ExtractStrategy::Magnitude)),
                ),
                cell("Random", with_method(&task, MethodSpec::with_proxy(ExtractStrategy::Random))),
            ]
        }
        Suite::Sparsity => vec![
            cell("Low", with_rates(&[0.0, 0.125, 0.25, 0.375], RateMode::Static)),
            cell("Medium", with_rates(&medium, RateMode::Static)),
            cell("High", with_rates(&[0.25, 0.45, 0.65, 0.85], RateMode::Static)),
            cell(
                "Dynamic",
                with_rates(
                    &medium,
                    RateMode::Dynamic {
                        resample_every: DYNAMIC_RESAMPLE_EVERY,
                    },
                ),
            ),
        ],
        Suite::Heterogeneity => {
            let mut cells: Vec<Cell> = [4, 6, 8]
                .into_iter()
                .map(|n| {
                    cell(
                        &format!("pathological n={n}"),
                        with_partition(PartitionScheme::Pathological {
                            classes_per_client: n,
                        }),
                    )
                })
                .collect();
            cells.extend([0.3, 0.5, 1.0].into_iter().map(|beta| {
                cell(
                    &format!("dirichlet beta={beta}"),
                    with_partition(PartitionScheme::Dirichlet { beta }),
                )
            }));
            cells
        }
    }
}

/// Final accuracy of one cell over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: String,
    pub seeds: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Per-seed final mean client accuracy, in seed order.
    pub per_seed: Vec<f64>,
}

fn file_slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Runs every cell of `suite` for each seed into `base.output.dir`.
///
/// Writes one combined metrics file (the `experiment` column holds the cell
/// label), the resolved config of every cell under `cells/`, and
/// `summary.csv` plus `summary.md` with the final accuracy per cell.
pub fn run_suite(suite: Suite, base: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<CellSummary>> {
    let dir = &base.output.dir;
    let cells_dir = dir.join("cells");
    fs::create_dir_all(&cells_dir).with_context(|| format!("creating {}", cells_dir.display()))?;
    let format = base.output.metrics_format;
    let metrics = dir.join(format!("metrics.{}", format.extension()));
    let mut sink = MetricsSink::create(&metrics, format)
        .with_context(|| format!("creating {}", metrics.display()))?;

    let mut summaries = Vec::new();
    for Cell { label, config } in suite_cells(suite, &base.federation) {
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = ExperimentConfig {
                federation: FederationConfig {
                    seed,
                    ..config.clone()
                },
                output: base.output.clone(),
            };
            fs::write(
                cells_dir.join(format!("{}_seed_{seed}.toml", file_slug(&label))),
                to_toml(&run),
            )?;
            let (_, records) = run_into(&run, &label, &mut sink, None)
                .with_context(|| format!("cell {label:?}, seed {seed}"))?;
            per_seed.push(tail_mean(&records, |r| r.mean_client_acc));
        }
        summaries.push(summarize(label, per_seed));
    }
    write_summary(dir, &summaries)?;
    Ok(summaries)
}

fn summarize(cell: String, per_seed: Vec<f64>) -> CellSummary {
    let n = per_seed.len().max(1) as f64;
    CellSummary {
        cell,
        seeds: per_seed.len(),
        mean: per_seed.iter().sum::<f64>() / n,
        min: per_seed.iter().copied().fold(f64::INFINITY, f64::min),
        max: per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        per_seed,
    }
}

/// Markdown table of the final accuracy per cell.
pub fn summary_table(summaries: &[CellSummary]) -> String {
    let mut out = String::from("| cell | seeds | mean acc | min | max |\n|---|---|---|---|---|\n");
    for s in summaries {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:.4} |",
            s.cell, s.seeds, s.mean, s.min, s.max
        );
    }
    out
}

fn write_summary(dir: &std::path::Path, summaries: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["cell", "seeds", "mean", "min", "max"])?;
    for s in summaries {
        w.write_record([
            s.cell.clone(),
            s.seeds.to_string(),
            s.mean.to_string(),
            s.min.to_string(),
            s.max.to_string(),
        ])?;
    }
    w.flush()?;
    fs::write(dir.join("summary.md"), summary_table(summaries))?;
    Ok(())
}
