//! Experiment configuration: a TOML document with a `[federation]` table (the
//! full run config) and an `[output]` table. Values are resolved in the order
//! preset, then file, then command-line flags.

use std::io::Read;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use fedot_core::data::{FeatureShiftParams, PartitionScheme, SyntheticParams};
use fedot_core::federation::{DataConfig, DataKind, FederationConfig, ModelConfig};
use fedot_core::ot::OtConfig;
use fedot_core::sar::SarConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{source}")]
    Parse {
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    /// Name of the offending field, when the error is about one.
    pub fn field(&self) -> Option<&str> {
        match self {
            Self::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MetricsFormat {
    #[default]
    Csv,
    Jsonl,
}

impl MetricsFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Jsonl => "jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub metrics_format: MetricsFormat,
    /// Save the global model every this many rounds; 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            metrics_format: MetricsFormat::Csv,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub federation: FederationConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Four clients, three rounds, a tiny task. Finishes in seconds.
    Smoke,
    /// Desk-scale synthetic runs: fifty rounds, larger step size and small batches.
    Desk,
    /// The reference hyperparameters (200 rounds, 20 clients).
    Paper,
}

impl Preset {
    pub fn federation(self) -> FederationConfig {
        match self {
            Self::Smoke => FederationConfig {
                rounds: 3,
                client_count: 4,
                sar: SarConfig {
                    local_epochs: 1,
                    lr: 0.05,
                    batch_size: 16,
                    ..SarConfig::default()
                },
                ot: desk_ot(),
                model: ModelConfig { hidden: vec![8] },
                partition: PartitionScheme::Iid,
                data: DataConfig {
                    synthetic: SyntheticParams {
                        class_count: 4,
                        dim: 8,
                        samples_per_class: 30,
                        ..SyntheticParams::default()
                    },
                    ..DataConfig::default()
                },
                ..FederationConfig::default()
            },
            Self::Desk => FederationConfig {
                rounds: 50,
                client_count: 8,
                sar: SarConfig {
                    lr: 0.05,
                    batch_size: 32,
                    ..SarConfig::default()
                },
                ot: desk_ot(),
                model: ModelConfig { hidden: vec![32, 32] },
                data: DataConfig {
                    synthetic: SyntheticParams {
                        samples_per_class: 80,
                        ..SyntheticParams::default()
                    },
                    ..DataConfig::default()
                },
                ..FederationConfig::default()
            },
            Self::Paper => FederationConfig::default(),
        }
    }

    pub fn experiment(self) -> ExperimentConfig {
        ExperimentConfig {
            federation: self.federation(),
            output: OutputConfig::default(),
        }
    }
}

/// Sinkhorn settings for desk runs: a looser stopping rule keeps the
/// near-permutation square instances from running to the default cap.
fn desk_ot() -> OtConfig {
    OtConfig {
        max_iters: 300,
        convergence_tol: 1e-6,
        ..OtConfig::default()
    }
}

/// The feature-shift task used by the ablation and proxy suites: four
/// rotated and shifted copies of one Gaussian-cluster task, two clients each.
pub fn feature_shift_task(base: &FederationConfig) -> FederationConfig {
    let domains = 4;
    FederationConfig {
        client_count: 8,
        partition: PartitionScheme::FeatureShift { domains },
        data: DataConfig {
            kind: DataKind::FeatureShift,
            synthetic: SyntheticParams {
                cluster_spread: 0.6,
                ..base.data.synthetic.clone()
            },
            shift: FeatureShiftParams {
                domains,
                ..FeatureShiftParams::default()
            },
            ..base.data.clone()
        },
        ..base.clone()
    }
}

/// Parses a document, layering its keys over `preset` (or over the built-in
/// defaults when no preset is given).
pub fn parse_config(text: &str, preset: Option<Preset>) -> Result<ExperimentConfig, ConfigError> {
    // the document alone must parse, so unknown keys and type errors are
    // reported with their positions
    let own: ExperimentConfig = toml::from_str(text).map_err(|source| ConfigError::Parse { source })?;
    let cfg = match preset {
        None => own,
        Some(p) => {
            let file: toml::Table = text.parse().map_err(|source| ConfigError::Parse { source })?;
            let mut merged = toml::Table::try_from(p.experiment()).expect("presets serialize");
            merge(&mut merged, file);
            merged
                .try_into()
                .map_err(|source| ConfigError::Parse { source })?
        }
    };
    validate(&cfg)?;
    Ok(cfg)
}

/// Reads a config from `path`, or from standard input when `path` is `-`.
pub fn load_config(path: &Path, preset: Option<Preset>) -> Result<ExperimentConfig, ConfigError> {
    let mut text = String::new();
    let read = if path == Path::new("-") {
        std::io::stdin().read_to_string(&mut text).map(|_| ())
    } else {
        std::fs::read_to_string(path).map(|t| text = t)
    };
    read.map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, preset)
}

/// Enum-valued tables. They replace the preset value wholesale so fields of
/// another variant do not leak in.
const ENUM_TABLES: [&str; 3] = ["partition", "rate_mode", "epsilon"];

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !ENUM_TABLES.contains(&key.as_str()) => {
                merge(b, o)
            }
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    cfg.federation
        .validate()
        .map_err(|e| match e {
            fedot_core::Error::InvalidConfig { field, reason } => ConfigError::Invalid {
                field: format!("federation.{field}"),
                reason,
            },
            other => ConfigError::Invalid {
                field: "federation".into(),
                reason: other.to_string(),
            },
        })?;
    if cfg.output.dir.as_os_str().is_empty() {
        return Err(ConfigError::Invalid {
            field: "output.dir".into(),
            reason: "must not be empty".into(),
        });
    }
    Ok(())
}

/// Renders the fully resolved config as TOML.
pub fn to_toml(cfg: &ExperimentConfig) -> String {
    toml::to_string_pretty(cfg).expect("configs serialize to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = parse_config("", None).unwrap();
        let f = &cfg.federation;
        assert_eq!((f.client_count, f.rounds), (20, 200));
        assert_eq!(f.method.fusion_alpha, 0.5);
        assert_eq!(f.sar.lambda, 1.0);
        assert_eq!((f.sar.local_epochs, f.sar.batch_size), (5, 256));
        assert_eq!(f.rate_set, vec![0.0, 0.25, 0.5, 0.75]);
        assert_eq!(cfg.output.checkpoint_every, 0);
    }

    #[test]
    fn alpha_out_of_range_names_the_field() {
        let err = parse_config("[federation.method]\nfusion_alpha = 1.5\n", None).unwrap_err();
        assert_eq!(err.field(), Some("federation.method.fusion_alpha"));
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let err = parse_config("[federation]\nfoo = 1\n", None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("foo"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        let err = parse_config("foo = 1\n", Some(Preset::Smoke)).unwrap_err();
        assert!(err.to_string().contains("foo"));
    }

    #[test]
    fn file_overrides_preset() {
        let text = "[federation]\nrounds = 7\n[federation.sar]\nlambda = 0.25\n";
        let cfg = parse_config(text, Some(Preset::Desk)).unwrap();
        assert_eq!(cfg.federation.rounds, 7);
        assert_eq!(cfg.federation.sar.lambda, 0.25);
        // untouched preset values survive the merge
        assert_eq!(cfg.federation.sar.lr, 0.05);
        assert_eq!(cfg.federation.client_count, 8);
    }

    #[test]
    fn tagged_tables_replace_preset_variant() {
        let text = "[federation.partition]\nscheme = \"pathological\"\nclasses_per_client = 2\n";
        let cfg = parse_config(text, Some(Preset::Desk)).unwrap();
        assert_eq!(
            cfg.federation.partition,
            PartitionScheme::Pathological { classes_per_client: 2 }
        );
    }

    #[test]
    fn resolved_config_round_trips() {
        for preset in [Preset::Smoke, Preset::Desk, Preset::Paper] {
            let cfg = preset.experiment();
            let again = parse_config(&to_toml(&cfg), None).unwrap();
            assert_eq!(again, cfg);
        }
        let shift = ExperimentConfig {
            federation: feature_shift_task(&Preset::Desk.federation()),
            ..ExperimentConfig::default()
        };
        assert_eq!(parse_config(&to_toml(&shift), None).unwrap(), shift);
    }
}
