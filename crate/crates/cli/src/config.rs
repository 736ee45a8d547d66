//! Experiment configuration: a sectioned key-value (TOML) file.
//!
//! ```toml
//! [stream]
//! mode = "smooth"
//! seeds = [0, 1, 2]
//!
//! [run]
//! strategies = ["source_only", "no_reset_em", "asr"]
//! horizon = 2000
//!
//! [hyper]
//! alpha_0 = 0.5
//! ```
//!
//! Every key is optional; missing keys take the defaults below, and the
//! controller hyperparameters default to the library reference values.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tta_reset::asr::{ConcentrationMetric, Hyperparameters};
use tta_reset::driftgen::{CorruptionParams, DomainKind, LabelMode, Schedule, StreamConfig};
use tta_reset::engine::{RunConfig, Strategy};
use tta_reset::source::SourceTraining;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSection,
    pub model: ModelSection,
    pub run: RunSection,
    pub hyper: HyperSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    /// `smooth`, `recurring` or `dynamic`.
    pub mode: String,
    pub sequence: Vec<String>,
    pub seeds: Vec<u64>,
    /// Smooth mode: batches per severity step.
    pub transition_speed: usize,
    pub severity_step: f64,
    pub severity_floor: f64,
    /// Also the fixed severity of recurring mode.
    pub severity_ceiling: f64,
    /// Recurring mode: batches per visit.
    pub duration: usize,
    pub revisit_count: usize,
    /// Dynamic mode: candidate visit lengths.
    pub duration_set: Vec<usize>,
    /// `iid_uniform` or `dirichlet`.
    pub labels: String,
    pub dirichlet_delta: f64,
    pub dirichlet_block: usize,
    pub spread: f64,
    pub noise_per_severity: f64,
    pub log_scale_per_severity: f64,
    pub rotation_planes: usize,
    pub shuffle_per_severity: f64,
}

impl Default for StreamSection {
    fn default() -> Self {
        let corruption = CorruptionParams::default();
        Self {
            mode: "smooth".into(),
            sequence: DomainKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            seeds: vec![0],
            transition_speed: 50,
            severity_step: 0.5,
            severity_floor: 0.0,
            severity_ceiling: 5.0,
            duration: 250,
            revisit_count: 20,
            duration_set: vec![100, 200, 500],
            labels: "iid_uniform".into(),
            dirichlet_delta: 0.1,
            dirichlet_block: 50,
            spread: 0.5,
            noise_per_severity: corruption.noise_per_severity,
            log_scale_per_severity: corruption.log_scale_per_severity,
            rotation_planes: corruption.rotation_planes,
            shuffle_per_severity: corruption.shuffle_per_severity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub class_count: usize,
    pub dim: usize,
    /// Hidden widths; the network has one more layer than entries here.
    pub hidden: Vec<usize>,
    pub source_steps: usize,
    pub source_batch_size: usize,
    pub source_learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let source = SourceTraining::default();
        Self {
            class_count: 10,
            dim: 16,
            hidden: source.hidden,
            source_steps: source.steps,
            source_batch_size: source.batch_size,
            source_learning_rate: source.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub strategies: Vec<String>,
    pub horizon: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// `softmax_of_mean` or `mean_of_softmax`.
    pub metric: String,
    /// Batches in the trailing window used for final accuracy and coverage.
    pub final_window: usize,
    pub workers: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        let run = RunConfig::default();
        Self {
            strategies: vec!["source_only".into(), "no_reset_em".into(), "asr".into()],
            horizon: run.horizon,
            batch_size: run.batch_size,
            learning_rate: run.learning_rate,
            metric: run.metric.name().into(),
            final_window: 1000,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub alpha_0: f64,
    pub mu_c: f64,
    pub r_0: f64,
    pub lambda_r: f64,
    pub lambda_f: f64,
    pub lambda_0: f64,
    pub mu_0: f64,
    pub mu_f: f64,
    pub mu_theta: f64,
    pub delay_epsilon: f64,
}

impl Default for HyperSection {
    fn default() -> Self {
        Hyperparameters::default().into()
    }
}

impl From<Hyperparameters> for HyperSection {
    fn from(h: Hyperparameters) -> Self {
        Self {
            alpha_0: h.alpha_0,
            mu_c: h.mu_c,
            r_0: h.r_0,
            lambda_r: h.lambda_r,
            lambda_f: h.lambda_f,
            lambda_0: h.lambda_0,
            mu_0: h.mu_0,
            mu_f: h.mu_f,
            mu_theta: h.mu_theta,
            delay_epsilon: h.delay_epsilon,
        }
    }
}

impl From<&HyperSection> for Hyperparameters {
    fn from(h: &HyperSection) -> Self {
        Self {
            alpha_0: h.alpha_0,
            mu_c: h.mu_c,
            r_0: h.r_0,
            lambda_r: h.lambda_r,
            lambda_f: h.lambda_f,
            lambda_0: h.lambda_0,
            mu_0: h.mu_0,
            mu_f: h.mu_f,
            mu_theta: h.mu_theta,
            delay_epsilon: h.delay_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Relative paths resolve against the output root.
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

fn key_error(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("`{key}`: {msg}"))
}

impl ExperimentConfig {
    /// Parses and validates. Unknown keys and bad values are reported by name.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// The effective config with every default written out.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.stream.seeds.is_empty() {
            return Err(key_error("stream.seeds", "at least one seed is required"));
        }
        let mut seen = self.stream.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.stream.seeds.len() {
            return Err(key_error("stream.seeds", "seeds must be distinct"));
        }
        if self.run.strategies.is_empty() {
            return Err(key_error("run.strategies", "at least one strategy is required"));
        }
        let strategies = self.strategies()?;
        let mut names: Vec<String> = strategies.iter().map(|s| s.to_string()).collect();
        names.sort();
        names.dedup();
        if names.len() != strategies.len() {
            return Err(key_error("run.strategies", "strategies must be distinct"));
        }
        if self.run.workers == 0 {
            return Err(key_error("run.workers", "must be at least 1"));
        }
        if self.run.final_window == 0 {
            return Err(key_error("run.final_window", "must be at least 1"));
        }
        if self.model.hidden.contains(&0) {
            return Err(key_error("model.hidden", "widths must be positive"));
        }
        if self.model.source_batch_size == 0 {
            return Err(key_error("model.source_batch_size", "must be at least 1"));
        }
        if !(self.model.source_learning_rate > 0.0) {
            return Err(key_error("model.source_learning_rate", "must be positive"));
        }
        self.run_config()?;
        self.stream_config(self.stream.seeds[0])?;
        Ok(())
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.run
            .strategies
            .iter()
            .map(|s| s.parse().map_err(|e| key_error("run.strategies", e)))
            .collect()
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let metric = ConcentrationMetric::parse(&self.run.metric).map_err(|e| key_error("run.metric", e))?;
        let config = RunConfig {
            hyper: (&self.hyper).into(),
            learning_rate: self.run.learning_rate,
            batch_size: self.run.batch_size,
            horizon: self.run.horizon,
            metric,
        };
        config.validate().map_err(|e| key_error("hyper/run", e))?;
        Ok(config)
    }

    pub fn source_training(&self) -> SourceTraining {
        SourceTraining {
            hidden: self.model.hidden.clone(),
            steps: self.model.source_steps,
            batch_size: self.model.source_batch_size,
            learning_rate: self.model.source_learning_rate,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        let s = &self.stream;
        let sequence = s
            .sequence
            .iter()
            .map(|k| k.parse().map_err(|e| key_error("stream.sequence", e)))
            .collect::<Result<Vec<DomainKind>>>()?;
        match s.mode.as_str() {
            "smooth" => Ok(Schedule::Smooth {
                sequence,
                transition_speed: s.transition_speed,
                severity_step: s.severity_step,
                severity_floor: s.severity_floor,
                severity_ceiling: s.severity_ceiling,
            }),
            "recurring" => Ok(Schedule::Recurring {
                sequence,
                duration: s.duration,
                revisit_count: s.revisit_count,
                severity: s.severity_ceiling,
            }),
            "dynamic" => Ok(Schedule::Dynamic {
                sequence,
                duration_set: s.duration_set.clone(),
                severity_floor: s.severity_floor,
                severity_ceiling: s.severity_ceiling,
            }),
            other => Err(key_error("stream.mode", format!("unknown mode `{other}`"))),
        }
    }

    pub fn stream_config(&self, seed: u64) -> Result<StreamConfig> {
        let s = &self.stream;
        let label_mode = match s.labels.as_str() {
            "iid_uniform" => LabelMode::IidUniform,
            "dirichlet" => {
                if !(s.dirichlet_delta > 0.0) || s.dirichlet_block == 0 {
                    return Err(key_error(
                        "stream.dirichlet_delta",
                        "delta must be positive and the block at least 1",
                    ));
                }
                LabelMode::Dirichlet {
                    delta: s.dirichlet_delta,
                    block: s.dirichlet_block,
                }
            }
            other => return Err(key_error("stream.labels", format!("unknown label mode `{other}`"))),
        };
        let config = StreamConfig {
            seed,
            class_count: self.model.class_count,
            dim: self.model.dim,
            spread: s.spread,
            schedule: self.schedule()?,
            label_mode,
            corruption: CorruptionParams {
                noise_per_severity: s.noise_per_severity,
                log_scale_per_severity: s.log_scale_per_severity,
                rotation_planes: s.rotation_planes,
                shuffle_per_severity: s.shuffle_per_severity,
            },
        };
        tta_reset::driftgen::StreamState::new(config.clone()).map_err(|e| key_error("stream", e))?;
        Ok(config)
    }

    /// Hash of everything that determines the batches and the source model
    /// for one seed. Records are comparable only when this matches.
    pub fn stream_fingerprint(&self, seed: u64) -> String {
        #[derive(Serialize)]
        struct Data<'a> {
            seed: u64,
            stream: StreamSection,
            model: &'a ModelSection,
            horizon: usize,
            batch_size: usize,
        }
        let data = Data {
            seed,
            stream: StreamSection {
                seeds: Vec::new(),
                ..self.stream.clone()
            },
            model: &self.model,
            horizon: self.run.horizon,
            batch_size: self.run.batch_size,
        };
        let text = toml::to_string(&data).expect("fingerprint data serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
