//! Per-round metrics rows and the line-delimited sinks they stream to.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedot_core::federation::{AggregateStrategy, DispatchStrategy, LocalRule, MethodSpec, RoundRecord};
use serde::{Deserialize, Serialize};

use crate::config::MetricsFormat;

/// Bumped whenever the column set or its meaning changes.
pub const METRICS_SCHEMA: u32 = 1;

/// One round of one experiment, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub schema: u32,
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub round: usize,
    pub global_acc: f64,
    pub global_loss: f64,
    pub mean_client_acc: f64,
    pub participants: usize,
    pub mean_drift_sq: f64,
    pub mean_ce_loss: f64,
    pub mean_sar_loss: f64,
}

impl MetricsRow {
    pub fn new(experiment: &str, method: &MethodSpec, seed: u64, rec: &RoundRecord) -> Self {
        Self {
            schema: METRICS_SCHEMA,
            experiment: experiment.to_owned(),
            method: method_label(method),
            seed,
            round: rec.round,
            global_acc: rec.global_acc,
            global_loss: rec.global_loss,
            mean_client_acc: rec.mean_client_acc,
            participants: rec.participating.len(),
            mean_drift_sq: rec.mean_drift_sq(),
            mean_ce_loss: rec.mean_ce_loss(),
            mean_sar_loss: rec.mean_sar_loss(),
        }
    }
}

/// Compact `dispatch+local+aggregate@alpha` label, e.g. `otp+sar+ota@0.5`.
pub fn method_label(m: &MethodSpec) -> String {
    let dispatch = match m.dispatch {
        DispatchStrategy::Otp => "otp",
        DispatchStrategy::FixedPosition => "fixed",
        DispatchStrategy::Magnitude => "magnitude",
        DispatchStrategy::Random => "random",
    };
    let local = match m.local {
        LocalRule::Sar => "sar",
        LocalRule::Plain => "plain",
    };
    let aggregate = match m.aggregate {
        AggregateStrategy::Ota => "ota",
        AggregateStrategy::Positional => "positional",
    };
    format!("{dispatch}+{local}+{aggregate}@{}", m.fusion_alpha)
}

enum Writer {
    Csv(csv::Writer<File>),
    Jsonl(BufWriter<File>),
}

/// Writes rows to disk, flushing after every row so a killed run leaves a
/// readable prefix.
pub struct MetricsSink {
    path: PathBuf,
    writer: Writer,
}

impl MetricsSink {
    pub fn create(path: &Path, format: MetricsFormat) -> std::io::Result<Self> {
        let file = File::create(path)?;
        let writer = match format {
            MetricsFormat::Csv => Writer::Csv(csv::Writer::from_writer(file)),
            MetricsFormat::Jsonl => Writer::Jsonl(BufWriter::new(file)),
        };
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        match &mut self.writer {
            Writer::Csv(w) => {
                w.serialize(row).map_err(std::io::Error::other)?;
                w.flush()
            }
            Writer::Jsonl(w) => {
                serde_json::to_writer(&mut *w, row)?;
                w.write_all(b"\n")?;
                w.flush()
            }
        }
    }
}

/// Reads back a metrics file written by [`MetricsSink`].
pub fn read_metrics(path: &Path, format: MetricsFormat) -> std::io::Result<Vec<MetricsRow>> {
    match format {
        MetricsFormat::Csv => csv::Reader::from_path(path)
            .map_err(std::io::Error::other)?
            .deserialize()
            .map(|r| r.map_err(std::io::Error::other))
            .collect(),
        MetricsFormat::Jsonl => std::fs::read_to_string(path)?
            .lines()
            .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fedot_core::federation::ClientRecord;

    fn record(round: usize) -> RoundRecord {
        RoundRecord {
            round,
            global_acc: 0.5,
            global_loss: 1.0 / 3.0,
            mean_client_acc: 0.625,
            per_client: vec![
                ClientRecord { client: 0, rho: 0.0, acc: 0.5, drift_sq: 0.1, ce_loss: 1.0, sar_loss: 0.0 },
                ClientRecord { client: 2, rho: 0.5, acc: 0.75, drift_sq: 0.3, ce_loss: 2.0, sar_loss: 0.15 },
            ],
            participating: vec![0, 2],
        }
    }

    #[test]
    fn row_flattens_record() {
        let row = MetricsRow::new("main", &MethodSpec::full(), 9, &record(4));
        assert_eq!(row.method, "otp+sar+ota@0.5");
        assert_eq!((row.round, row.participants, row.seed), (4, 2, 9));
        assert!((row.mean_drift_sq - 0.2).abs() < 1e-15);
        assert!((row.mean_sar_loss - 0.075).abs() < 1e-15);
    }

    #[test]
    fn csv_and_jsonl_hold_the_same_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<MetricsRow> = (1..4)
            .map(|r| MetricsRow::new("x", &MethodSpec::without_ota(), 1, &record(r)))
            .collect();
        for format in [MetricsFormat::Csv, MetricsFormat::Jsonl] {
            let path = dir.path().join(format!("m.{}", format.extension()));
            let mut sink = MetricsSink::create(&path, format).unwrap();
            for row in &rows {
                sink.write(row).unwrap();
            }
            assert_eq!(read_metrics(&path, format).unwrap(), rows);
        }
        let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert!(csv.starts_with("schema,experiment,method,seed,round,"));
    }

    #[test]
    fn every_row_is_on_disk_before_the_next() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut sink = MetricsSink::create(&path, MetricsFormat::Csv).unwrap();
        sink.write(&MetricsRow::new("x", &MethodSpec::full(), 0, &record(1))).unwrap();
        // read while the sink is still open
        assert_eq!(read_metrics(&path, MetricsFormat::Csv).unwrap().len(), 1);
        assert!(std::fs::read_to_string(&path).unwrap().ends_with('\n'));
    }
}
