use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedot_cli::config::{load_config, validate, ConfigError, ExperimentConfig, MetricsFormat, Preset};
use fedot_cli::experiment::run_seeds;
use fedot_cli::suite::{run_suite, summary_table, Suite};
use serde_json::json;

/// Federated submodel learning experiments.
#[derive(Parser)]
#[command(name = "fedot", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a TOML config (`-` reads standard input).
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a preset experiment matrix and print its summary table.
    Suite {
        #[arg(value_enum)]
        name: Suite,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Base values the config file is layered over.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Run seed (the first one when --seeds > 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics file format.
    #[arg(long, value_enum)]
    format: Option<MetricsFormat>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ConfigError> {
        if let Some(seed) = self.seed {
            cfg.federation.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        if let Some(format) = self.format {
            cfg.output.metrics_format = format;
        }
        validate(cfg)
    }
}

fn fail(kind: &str, err: &anyhow::Error) -> ExitCode {
    let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    let report = json!({ "status": "error", "kind": kind, "message": err.to_string(), "causes": causes });
    eprintln!("{report}");
    ExitCode::from(if kind == "config" { 2 } else { 1 })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, common } => {
            let cfg = load_config(&config, common.preset).and_then(|mut cfg| {
                common.apply(&mut cfg)?;
                Ok(cfg)
            });
            let cfg = match cfg {
                Ok(cfg) => cfg,
                Err(e) => return fail("config", &e.into()),
            };
            match run_seeds(&cfg, "run", common.seeds) {
                Ok(runs) => {
                    for r in runs {
                        println!(
                            "{}: {} rounds, final client acc {:.4}, global acc {:.4}",
                            r.dir.display(),
                            r.rounds,
                            r.final_client_acc,
                            r.final_global_acc
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail("run", &e),
            }
        }
        Command::Suite { name, common } => {
            let mut cfg = common.preset.unwrap_or(Preset::Desk).experiment();
            cfg.output.dir = PathBuf::from(format!("runs/suite_{}", format!("{name:?}").to_lowercase()));
            if let Err(e) = common.apply(&mut cfg) {
                return fail("config", &e.into());
            }
            let first = cfg.federation.seed;
            let seeds: Vec<u64> = (first..first + common.seeds.max(1)).collect();
            match run_suite(name, &cfg, &seeds) {
                Ok(summaries) => {
                    print!("{}", summary_table(&summaries));
                    ExitCode::SUCCESS
                }
                Err(e) => fail("run", &e),
            }
        }
    }
}
