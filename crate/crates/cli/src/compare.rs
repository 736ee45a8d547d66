//! Ranks records from the same stream by mean accuracy.

use std::fmt::Write;

use tta_reset::metrics::{collapse_flag, final_window};

use crate::error::{CliError, Result};
use crate::format::real;
use crate::record::LoadedRecord;

/// Mean accuracies closer than this share a rank.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    /// Competition rank: tied records share the better rank.
    pub rank: usize,
    pub tied: bool,
    pub file: String,
    pub strategy: String,
    pub mean_accuracy: f64,
    pub final_coverage: f64,
    pub resets: usize,
    /// Below the source-only record, when one is among the inputs.
    pub collapsed: Option<bool>,
}

pub fn compare(records: &[LoadedRecord], final_window_len: usize) -> Result<Vec<CompareRow>> {
    if records.len() < 2 {
        return Err(CliError::Record("compare needs at least two records".into()));
    }
    let first = &records[0].meta.stream_fingerprint;
    if let Some(other) = records.iter().find(|r| &r.meta.stream_fingerprint != first) {
        return Err(CliError::Record(format!(
            "stream fingerprints differ ({} has {}, {} has {}); refusing to compare",
            records[0].path.display(),
            first,
            other.path.display(),
            other.meta.stream_fingerprint
        )));
    }
    let source = records
        .iter()
        .find(|r| r.meta.strategy == "source_only")
        .map(|r| r.record.mean_accuracy());
    let mut rows = records
        .iter()
        .map(|r| {
            let coverage = if r.record.rows.is_empty() {
                0.0
            } else {
                final_window(&r.record, final_window_len)?.coverage
            };
            let mean = r.record.mean_accuracy();
            Ok(CompareRow {
                rank: 0,
                tied: false,
                file: r.path.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
                strategy: r.meta.strategy.clone(),
                mean_accuracy: mean,
                final_coverage: coverage,
                resets: r.record.reset_count(),
                collapsed: source.map(|s| collapse_flag(mean, s)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.mean_accuracy.total_cmp(&a.mean_accuracy));
    for i in 0..rows.len() {
        let tied_above = i > 0 && (rows[i - 1].mean_accuracy - rows[i].mean_accuracy).abs() <= TIE_TOLERANCE;
        let tied_below =
            i + 1 < rows.len() && (rows[i].mean_accuracy - rows[i + 1].mean_accuracy).abs() <= TIE_TOLERANCE;
        rows[i].rank = if tied_above { rows[i - 1].rank } else { i + 1 };
        rows[i].tied = tied_above || tied_below;
    }
    Ok(rows)
}

pub fn render(rows: &[CompareRow]) -> String {
    let mut out = String::from("rank\tstrategy\tmean_accuracy\tfinal_coverage\tresets\tflags\tfile\n");
    for r in rows {
        let mut flags = Vec::new();
        if r.tied {
            flags.push("tie");
        }
        if r.collapsed == Some(true) {
            flags.push("collapsed");
        }
        let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.rank,
            r.strategy,
            real(r.mean_accuracy),
            real(r.final_coverage),
            r.resets,
            flags,
            r.file
        )
        .expect("string write");
    }
    out
}
