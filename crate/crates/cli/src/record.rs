//! Run records on disk: one CSV of step rows plus a `.meta.toml` sidecar
//! holding what the rows alone do not carry.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tta_reset::engine::{RunOutcome, RunRecord, StepRow};
use tta_reset::metrics::ClassSet;

use crate::error::{CliError, Result};
use crate::format::real;

pub const COLUMNS: [&str; 13] = [
    "step",
    "domain",
    "severity",
    "accuracy",
    "c_t",
    "bar_c",
    "phi_t",
    "lambda_f",
    "mu_c",
    "reset",
    "r_t",
    "layers_reset",
    "predicted",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub strategy: String,
    pub seed: u64,
    pub stream_fingerprint: String,
    pub class_count: usize,
    pub layer_count: usize,
    pub initial_bar_c: f64,
    /// `completed`, or `aborted` with the failing step and reason.
    pub outcome: String,
    pub aborted_step: Option<usize>,
    pub abort_reason: Option<String>,
}

impl RecordMeta {
    pub fn new(record: &RunRecord, seed: u64, stream_fingerprint: String) -> Self {
        let (outcome, aborted_step, abort_reason) = match &record.outcome {
            RunOutcome::Completed => ("completed", None, None),
            RunOutcome::Aborted { step, reason } => ("aborted", Some(*step), Some(reason.clone())),
        };
        Self {
            strategy: record.strategy.clone(),
            seed,
            stream_fingerprint,
            class_count: record.class_count,
            layer_count: record.layer_count,
            initial_bar_c: record.initial_bar_c,
            outcome: outcome.into(),
            aborted_step,
            abort_reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRecord {
    pub path: PathBuf,
    pub meta: RecordMeta,
    pub record: RunRecord,
}

pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

/// File-name-safe form of a strategy name.
pub fn slug(strategy: &str) -> String {
    strategy
        .chars()
        .map(|c| match c {
            ':' => '-',
            ',' => '+',
            '@' => '_',
            c => c,
        })
        .collect()
}

pub fn csv_bytes(record: &RunRecord) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(COLUMNS).expect("in-memory write");
    for r in &record.rows {
        w.write_record([
            r.step.to_string(),
            r.domain.clone(),
            r.severity.clone(),
            real(r.accuracy),
            real(r.c_t),
            real(r.bar_c),
            real(r.phi_t),
            real(r.lambda_f),
            real(r.mu_c),
            u8::from(r.reset).to_string(),
            real(r.r_t),
            r.layers_reset.to_string(),
            r.predicted.to_hex(),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write(csv: &Path, record: &RunRecord, meta: &RecordMeta) -> Result<()> {
    std::fs::write(csv, csv_bytes(record)).map_err(|e| CliError::io(csv, e))?;
    let meta_file = meta_path(csv);
    let text = toml::to_string(meta).expect("meta serializes");
    std::fs::write(&meta_file, text).map_err(|e| CliError::io(meta_file, e))
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, index: usize, line: u64) -> Result<T> {
    let raw = row.get(index).unwrap_or("");
    raw.parse().map_err(|_| {
        CliError::Record(format!(
            "line {line}: column `{}` has unparseable value `{raw}`",
            COLUMNS[index]
        ))
    })
}

pub fn parse_rows(bytes: &[u8]) -> Result<Vec<StepRow>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| CliError::Record(e.to_string()))?
        .clone();
    if header.iter().ne(COLUMNS) {
        return Err(CliError::Record(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CliError::Record(e.to_string()))?;
        let line = i as u64 + 2;
        let reset = match row.get(9) {
            Some("1") => true,
            Some("0") => false,
            other => {
                return Err(CliError::Record(format!(
                    "line {line}: column `reset` must be 0 or 1, got {other:?}"
                )))
            }
        };
        let predicted = ClassSet::from_hex(row.get(12).unwrap_or(""))
            .map_err(|e| CliError::Record(format!("line {line}: column `predicted`: {e}")))?;
        rows.push(StepRow {
            step: field(&row, 0, line)?,
            domain: row.get(1).unwrap_or("").to_string(),
            severity: row.get(2).unwrap_or("").to_string(),
            accuracy: field(&row, 3, line)?,
            c_t: field(&row, 4, line)?,
            bar_c: field(&row, 5, line)?,
            phi_t: field(&row, 6, line)?,
            lambda_f: field(&row, 7, line)?,
            mu_c: field(&row, 8, line)?,
            reset,
            r_t: field(&row, 10, line)?,
            layers_reset: field(&row, 11, line)?,
            predicted,
        });
    }
    Ok(rows)
}

pub fn load(csv: &Path) -> Result<LoadedRecord> {
    let bytes = std::fs::read(csv).map_err(|e| CliError::io(csv, e))?;
    let rows = parse_rows(&bytes).map_err(|e| CliError::Record(format!("{}: {e}", csv.display())))?;
    let meta_file = meta_path(csv);
    let text = std::fs::read_to_string(&meta_file).map_err(|e| CliError::io(&meta_file, e))?;
    let meta: RecordMeta = toml::from_str(&text)
        .map_err(|e| CliError::Record(format!("{}: {e}", meta_file.display())))?;
    let outcome = match (meta.outcome.as_str(), meta.aborted_step) {
        ("completed", _) => RunOutcome::Completed,
        ("aborted", Some(step)) => RunOutcome::Aborted {
            step,
            reason: meta.abort_reason.clone().unwrap_or_default(),
        },
        (other, _) => {
            return Err(CliError::Record(format!(
                "{}: unknown outcome `{other}`",
                meta_file.display()
            )))
        }
    };
    let record = RunRecord {
        strategy: meta.strategy.clone(),
        class_count: meta.class_count,
        layer_count: meta.layer_count,
        initial_bar_c: meta.initial_bar_c,
        rows,
        outcome,
    };
    Ok(LoadedRecord {
        path: csv.to_path_buf(),
        meta,
        record,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(step: usize, reset: bool) -> StepRow {
        StepRow {
            step,
            domain: "rotation+feature_scale".into(),
            severity: "2.5+2.5".into(),
            accuracy: 0.40625,
            c_t: -2.0123456789012345,
            bar_c: -1.6094379124341003,
            phi_t: 0.09375,
            lambda_f: 5.0 * 0.09375 * 0.09375,
            mu_c: 0.995,
            reset,
            r_t: if reset { 0.75 } else { 0.0 },
            layers_reset: if reset { 2 } else { 0 },
            predicted: ClassSet::from_predictions(&[0, 3, 9]),
        }
    }

    #[test]
    fn header_and_line_endings() {
        let rec = RunRecord {
            strategy: "asr".into(),
            class_count: 10,
            layer_count: 3,
            initial_bar_c: -1.6,
            rows: vec![row(1, false), row(2, true)],
            outcome: RunOutcome::Completed,
        };
        let text = String::from_utf8(csv_bytes(&rec)).unwrap();
        assert!(text.starts_with(
            "step,domain,severity,accuracy,c_t,bar_c,phi_t,lambda_f,mu_c,reset,r_t,layers_reset,predicted\n"
        ));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains(",1,0.75,2,"));
    }

    #[test]
    fn rows_read_back_within_twelve_digits() {
        let original = vec![row(1, false), row(2, true)];
        let rec = RunRecord {
            strategy: "asr".into(),
            class_count: 10,
            layer_count: 3,
            initial_bar_c: -1.6,
            rows: original.clone(),
            outcome: RunOutcome::Completed,
        };
        let back = parse_rows(&csv_bytes(&rec)).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in original.iter().zip(&back) {
            assert_eq!(a.step, b.step);
            assert_eq!(a.domain, b.domain);
            assert_eq!(a.severity, b.severity);
            assert_eq!(a.accuracy, b.accuracy);
            assert_eq!(a.reset, b.reset);
            assert_eq!(a.layers_reset, b.layers_reset);
            assert_eq!(a.predicted, b.predicted);
            for (x, y) in [(a.c_t, b.c_t), (a.bar_c, b.bar_c), (a.phi_t, b.phi_t), (a.lambda_f, b.lambda_f), (a.mu_c, b.mu_c), (a.r_t, b.r_t)] {
                assert!((x - y).abs() <= 5e-12 * x.abs(), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn bad_cells_name_their_column() {
        let text = format!("{}\n1,d,s,oops,0,0,0,0,0,0,0,0,0\n", COLUMNS.join(","));
        let err = parse_rows(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("accuracy"), "{err}");
    }

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("asr:no_when,no_mu@50"), "asr-no_when+no_mu_50");
        assert_eq!(slug("fixed_interval:100"), "fixed_interval-100");
    }
}
