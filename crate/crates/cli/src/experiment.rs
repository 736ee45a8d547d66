//! Runs a (strategy × seed) matrix and writes its records and summary.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use tta_reset::diffnet::Network;
use tta_reset::driftgen::{make_prototypes, StreamState};
use tta_reset::engine::{run, RunRecord, Strategy};
use tta_reset::metrics::{collapse_flag, final_window};
use tta_reset::source::train_source;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::format::real;
use crate::record::{self, RecordMeta};

pub const OUTPUT_ROOT_ENV: &str = "TTA_RESET_OUTPUT_ROOT";

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: String,
    pub seeds: usize,
    pub mean_accuracy: f64,
    /// Sample standard deviation of per-seed mean accuracy; 0 for one seed.
    pub std_accuracy: f64,
    pub final_accuracy: f64,
    pub final_coverage: f64,
    pub mean_resets: f64,
    pub aborted: usize,
    /// Mean accuracy below the source-only mean; `None` without a source row.
    pub collapsed: Option<bool>,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub runs: Vec<RunResult>,
    pub record_files: Vec<PathBuf>,
    pub summary_file: PathBuf,
    pub summary: Vec<SummaryRow>,
}

/// Maps `jobs` over `workers` threads, keeping input order in the output.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let out = f(job);
                slots.lock().expect("result slots")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Runs the whole matrix in memory. Results are ordered seed-major, then by
/// the configured strategy order.
pub fn execute(config: &ExperimentConfig) -> Result<Vec<RunResult>> {
    config.validate()?;
    let strategies = config.strategies()?;
    let run_config = config.run_config()?;
    let training = config.source_training();
    let workers = config.run.workers;

    let sources: Vec<Result<Network>> = parallel_map(&config.stream.seeds, workers, |&seed| {
        let prototypes = make_prototypes(seed, config.model.class_count, config.model.dim, config.stream.spread)?;
        Ok(train_source(&prototypes, &training, seed)?)
    });
    let sources = sources.into_iter().collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, Strategy)> = (0..sources.len())
        .flat_map(|i| strategies.iter().map(move |s| (i, *s)))
        .collect();
    let results = parallel_map(&jobs, workers, |&(i, strategy)| -> Result<RunResult> {
        let seed = config.stream.seeds[i];
        let net = sources[i].clone();
        let snapshot = net.snapshot();
        let mut stream = StreamState::new(config.stream_config(seed)?)?;
        let record = run(strategy, &mut stream, net, &snapshot, &run_config)?;
        Ok(RunResult { strategy, seed, record })
    });
    results.into_iter().collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn summarize(config: &ExperimentConfig, runs: &[RunResult]) -> Result<Vec<SummaryRow>> {
    let strategies = config.strategies()?;
    let mut rows = Vec::new();
    for strategy in &strategies {
        let mine: Vec<&RunResult> = runs.iter().filter(|r| r.strategy == *strategy).collect();
        if mine.is_empty() {
            continue;
        }
        let accs: Vec<f64> = mine.iter().map(|r| r.record.mean_accuracy()).collect();
        let m = mean(&accs);
        let std = if accs.len() > 1 {
            (accs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (accs.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        let windows = mine
            .iter()
            .filter(|r| !r.record.rows.is_empty())
            .map(|r| final_window(&r.record, config.run.final_window))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let (final_accuracy, final_coverage) = if windows.is_empty() {
            (0.0, 0.0)
        } else {
            (
                mean(&windows.iter().map(|w| w.accuracy).collect::<Vec<_>>()),
                mean(&windows.iter().map(|w| w.coverage).collect::<Vec<_>>()),
            )
        };
        rows.push(SummaryRow {
            strategy: strategy.to_string(),
            seeds: mine.len(),
            mean_accuracy: m,
            std_accuracy: std,
            final_accuracy,
            final_coverage,
            mean_resets: mean(&mine.iter().map(|r| r.record.reset_count() as f64).collect::<Vec<_>>()),
            aborted: mine
                .iter()
                .filter(|r| r.record.outcome != tta_reset::engine::RunOutcome::Completed)
                .count(),
            collapsed: None,
        });
    }
    if let Some(source) = rows.iter().find(|r| r.strategy == "source_only").map(|r| r.mean_accuracy) {
        for row in &mut rows {
            row.collapsed = Some(collapse_flag(row.mean_accuracy, source));
        }
    }
    Ok(rows)
}

pub fn summary_bytes(rows: &[SummaryRow]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "strategy",
        "seeds",
        "mean_accuracy",
        "std_accuracy",
        "final_accuracy",
        "final_coverage",
        "mean_resets",
        "aborted",
        "collapsed",
    ])
    .expect("in-memory write");
    for r in rows {
        w.write_record([
            r.strategy.clone(),
            r.seeds.to_string(),
            real(r.mean_accuracy),
            real(r.std_accuracy),
            real(r.final_accuracy),
            real(r.final_coverage),
            real(r.mean_resets),
            r.aborted.to_string(),
            match r.collapsed {
                Some(true) => "yes".into(),
                Some(false) => "no".into(),
                None => "n/a".into(),
            },
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Where a config's output lands: absolute dirs as given, relative ones under
/// `root` (or the working directory).
pub fn output_dir(config: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if config.output.dir.is_relative() => root.join(&config.output.dir),
        _ => config.output.dir.clone(),
    }
}

pub fn record_file_name(strategy: &Strategy, seed: u64) -> String {
    format!("{}__seed{seed}.csv", record::slug(&strategy.to_string()))
}

/// Runs the matrix and writes one CSV (plus metadata) per run, then the
/// summary. The effective config is saved next to them.
pub fn run_experiment(config: &ExperimentConfig, root: Option<&Path>) -> Result<ExperimentOutput> {
    let dir = output_dir(config, root);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let runs = execute(config)?;
    let mut record_files = Vec::with_capacity(runs.len());
    for r in &runs {
        let path = dir.join(record_file_name(&r.strategy, r.seed));
        let meta = RecordMeta::new(&r.record, r.seed, config.stream_fingerprint(r.seed));
        record::write(&path, &r.record, &meta)?;
        record_files.push(path);
    }
    let effective = dir.join("config.toml");
    std::fs::write(&effective, config.to_text()).map_err(|e| CliError::io(&effective, e))?;
    let summary = summarize(config, &runs)?;
    let summary_file = dir.join("summary.csv");
    std::fs::write(&summary_file, summary_bytes(&summary)).map_err(|e| CliError::io(&summary_file, e))?;
    Ok(ExperimentOutput {
        dir,
        runs,
        record_files,
        summary_file,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let jobs: Vec<u32> = (0..37).collect();
        for workers in [1, 3, 8] {
            assert_eq!(parallel_map(&jobs, workers, |x| x * 2), jobs.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
        assert!(parallel_map(&[] as &[u32], 4, |x| *x).is_empty());
    }

    #[test]
    fn relative_dirs_move_under_the_root() {
        let mut c = ExperimentConfig::default();
        c.output.dir = "runs/a".into();
        assert_eq!(output_dir(&c, None), PathBuf::from("runs/a"));
        assert_eq!(output_dir(&c, Some(Path::new("/tmp/x"))), PathBuf::from("/tmp/x/runs/a"));
        c.output.dir = "/abs".into();
        assert_eq!(output_dir(&c, Some(Path::new("/tmp/x"))), PathBuf::from("/abs"));
    }
}
