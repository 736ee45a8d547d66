//! Deterministic synthetic domain streams.
//!
//! Clean data are Gaussian class clusters. A stream applies one or two
//! corruptions per batch according to a schedule:
//!
//! - `smooth`: one corruption fades out while the next fades in, one
//!   severity step every `transition_speed` batches.
//! - `recurring`: a fixed domain order held for a fixed duration, repeated.
//! - `dynamic`: domains held for durations drawn from a set.
//!
//! Labels travel in a [`Labels`] value that adaptation code cannot read;
//! see [`Batch::into_parts`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use crate::diffnet::Matrix;
use crate::metrics::Labels;
use crate::seed::{substream, StreamRng};
use crate::{Error, Result};

pub const MAX_SEVERITY: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DomainKind {
    Rotation,
    AdditiveNoise,
    FeatureScale,
    FeatureShuffle,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [
        DomainKind::Rotation,
        DomainKind::AdditiveNoise,
        DomainKind::FeatureScale,
        DomainKind::FeatureShuffle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DomainKind::Rotation => "rotation",
            DomainKind::AdditiveNoise => "additive_noise",
            DomainKind::FeatureScale => "feature_scale",
            DomainKind::FeatureShuffle => "feature_shuffle",
        }
    }
}

impl fmt::Display for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DomainKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown corruption kind `{s}`")))
    }
}

/// One corruption at a continuous severity in `[0, 5]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub kind: DomainKind,
    severity: f64,
}

impl DomainSpec {
    pub fn new(kind: DomainKind, severity: f64) -> Result<Self> {
        if !(0.0..=MAX_SEVERITY).contains(&severity) {
            return Err(Error::Config(format!(
                "severity {severity} outside [0, {MAX_SEVERITY}]"
            )));
        }
        Ok(Self { kind, severity })
    }

    pub fn severity(&self) -> f64 {
        self.severity
    }
}

/// Per-unit-severity strengths of the corruption family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorruptionParams {
    /// Gaussian noise standard deviation added per unit severity.
    pub noise_per_severity: f64,
    /// Log scale factor per unit severity; coordinates alternate between
    /// being stretched and shrunk.
    pub log_scale_per_severity: f64,
    /// Number of leading coordinate planes `(0,1), (2,3), ...` that rotate.
    pub rotation_planes: usize,
    /// Blend weight toward the permuted features per unit severity, capped at 1.
    pub shuffle_per_severity: f64,
}

impl Default for CorruptionParams {
    fn default() -> Self {
        Self {
            noise_per_severity: 0.3,
            log_scale_per_severity: 0.3,
            rotation_planes: 2,
            shuffle_per_severity: 0.12,
        }
    }
}

impl CorruptionParams {
    /// Rotation angle of each rotating plane; severity 5 is a half turn.
    pub fn rotation_angle(&self, severity: f64) -> f64 {
        severity * PI / MAX_SEVERITY
    }

    pub fn noise_sigma(&self, severity: f64) -> f64 {
        self.noise_per_severity * severity
    }

    pub fn shuffle_weight(&self, severity: f64) -> f64 {
        (self.shuffle_per_severity * severity).min(1.0)
    }
}

/// Applies corruptions to feature matrices. Holds the fixed permutation and
/// scaling pattern so the same domain always means the same transform.
#[derive(Debug, Clone)]
pub struct Corruptor {
    params: CorruptionParams,
    permutation: Vec<usize>,
    scale_signs: Vec<f64>,
}

impl Corruptor {
    pub fn new<R: Rng + ?Sized>(dim: usize, params: CorruptionParams, rng: &mut R) -> Self {
        let mut permutation: Vec<usize> = (0..dim).collect();
        permutation.shuffle(rng);
        let scale_signs = (0..dim)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        Self {
            params,
            permutation,
            scale_signs,
        }
    }

    pub fn params(&self) -> &CorruptionParams {
        &self.params
    }

    /// Transforms `features` under `spec`. Severity 0 returns the input
    /// unchanged. `noise` is only drawn from for additive noise.
    pub fn corrupt<R: Rng + ?Sized>(
        &self,
        features: &Matrix,
        spec: &DomainSpec,
        noise: &mut R,
    ) -> Result<Matrix> {
        let dim = self.permutation.len();
        if features.cols() != dim {
            return Err(Error::Shape(format!(
                "corruptor built for {dim} features, got {}",
                features.cols()
            )));
        }
        let s = spec.severity;
        if s == 0.0 {
            return Ok(features.clone());
        }
        let mut out = features.clone();
        match spec.kind {
            DomainKind::Rotation => {
                let (sin, cos) = self.params.rotation_angle(s).sin_cos();
                for r in 0..out.rows() {
                    let row = out.row_mut(r);
                    for pair in row.chunks_exact_mut(2).take(self.params.rotation_planes) {
                        let (a, b) = (pair[0], pair[1]);
                        pair[0] = cos * a - sin * b;
                        pair[1] = sin * a + cos * b;
                    }
                }
            }
            DomainKind::AdditiveNoise => {
                let sigma = self.params.noise_sigma(s);
                for v in out.as_mut_slice() {
                    let z: f64 = StandardNormal.sample(noise);
                    *v += sigma * z;
                }
            }
            DomainKind::FeatureScale => {
                let factors: Vec<f64> = self
                    .scale_signs
                    .iter()
                    .map(|sign| (sign * self.params.log_scale_per_severity * s).exp())
                    .collect();
                for r in 0..out.rows() {
                    for (v, f) in out.row_mut(r).iter_mut().zip(&factors) {
                        *v *= f;
                    }
                }
            }
            DomainKind::FeatureShuffle => {
                let w = self.params.shuffle_weight(s);
                for r in 0..out.rows() {
                    let src = features.row(r);
                    for (i, v) in out.row_mut(r).iter_mut().enumerate() {
                        *v = (1.0 - w) * src[i] + w * src[self.permutation[i]];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Per-class cluster means with a shared isotropic spread.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    means: Vec<Vec<f64>>,
    spread: f64,
}

const PROTOTYPE_BUDGET: usize = 10_000;

/// Draws `class_count` standard-normal means whose pairwise distances all
/// exceed `2 * spread`, rejection-resampling each new mean.
pub fn make_prototypes(seed: u64, class_count: usize, dim: usize, spread: f64) -> Result<Prototypes> {
    if class_count < 2 || dim < 2 {
        return Err(Error::Config(format!(
            "need at least 2 classes and 2 features, got {class_count} and {dim}"
        )));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::Config(format!("spread must be positive, got {spread}")));
    }
    let mut rng = substream(seed, "prototypes");
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    let mut attempts = 0;
    while means.len() < class_count {
        if attempts == PROTOTYPE_BUDGET {
            return Err(Error::Config(format!(
                "could not place {class_count} prototypes {} apart in {dim} dimensions",
                2.0 * spread
            )));
        }
        attempts += 1;
        let candidate: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        if means.iter().all(|m| distance(m, &candidate) > 2.0 * spread) {
            means.push(candidate);
        }
    }
    Ok(Prototypes { means, spread })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl Prototypes {
    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        &self.means[class]
    }

    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.means.iter().enumerate() {
            for b in &self.means[i + 1..] {
                best = best.min(distance(a, b));
            }
        }
        best
    }

    /// Clean features for the given labels.
    pub fn sample<R: Rng + ?Sized>(&self, labels: &[usize], rng: &mut R) -> Matrix {
        let dim = self.dim();
        let normal = Normal::new(0.0, self.spread).expect("spread validated at construction");
        let mut data = Vec::with_capacity(labels.len() * dim);
        for &y in labels {
            data.extend(self.means[y].iter().map(|m| m + normal.sample(rng)));
        }
        Matrix::from_raw(labels.len(), dim, data)
    }
}

/// Class-probability vector drawn from a symmetric Dirichlet(delta).
pub fn dirichlet_label_weights<R: Rng + ?Sized>(
    delta: f64,
    class_count: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(delta > 0.0 && delta.is_finite()) || class_count == 0 {
        return Err(Error::Config(format!(
            "Dirichlet needs delta > 0 and classes > 0, got {delta} and {class_count}"
        )));
    }
    let gamma = Gamma::new(delta, 1.0).map_err(|e| Error::Config(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..class_count).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return Ok(draws.into_iter().map(|g| g / sum).collect());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelMode {
    IidUniform,
    /// Class weights redrawn from Dirichlet(delta) every `block` batches.
    Dirichlet { delta: f64, block: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Smooth {
        sequence: Vec<DomainKind>,
        /// Batches spent at each severity step.
        transition_speed: usize,
        severity_step: f64,
        severity_floor: f64,
        severity_ceiling: f64,
    },
    Recurring {
        sequence: Vec<DomainKind>,
        duration: usize,
        revisit_count: usize,
        severity: f64,
    },
    Dynamic {
        sequence: Vec<DomainKind>,
        duration_set: Vec<usize>,
        severity_floor: f64,
        severity_ceiling: f64,
    },
}

impl Schedule {
    pub fn sequence(&self) -> &[DomainKind] {
        match self {
            Schedule::Smooth { sequence, .. }
            | Schedule::Recurring { sequence, .. }
            | Schedule::Dynamic { sequence, .. } => sequence,
        }
    }

    pub fn mode_name(&self) -> &'static str {
        match self {
            Schedule::Smooth { .. } => "smooth",
            Schedule::Recurring { .. } => "recurring",
            Schedule::Dynamic { .. } => "dynamic",
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sequence().is_empty() {
            return Err(Error::Config("domain sequence is empty".into()));
        }
        let in_range = |s: f64| (0.0..=MAX_SEVERITY).contains(&s);
        match self {
            Schedule::Smooth {
                transition_speed,
                severity_step,
                severity_floor,
                severity_ceiling,
                ..
            } => {
                if *transition_speed == 0 || !(*severity_step > 0.0) {
                    return Err(Error::Config(
                        "smooth schedule needs positive transition speed and severity step".into(),
                    ));
                }
                if !in_range(*severity_floor)
                    || !in_range(*severity_ceiling)
                    || severity_floor > severity_ceiling
                {
                    return Err(Error::Config("invalid severity range".into()));
                }
            }
            Schedule::Recurring {
                duration,
                revisit_count,
                severity,
                ..
            } => {
                if *duration == 0 || *revisit_count == 0 || !in_range(*severity) {
                    return Err(Error::Config("invalid recurring schedule".into()));
                }
            }
            Schedule::Dynamic {
                duration_set,
                severity_floor,
                severity_ceiling,
                ..
            } => {
                if duration_set.is_empty() || duration_set.contains(&0) {
                    return Err(Error::Config("dynamic duration set must be positive".into()));
                }
                if !in_range(*severity_floor)
                    || !in_range(*severity_ceiling)
                    || severity_floor > severity_ceiling
                {
                    return Err(Error::Config("invalid severity range".into()));
                }
            }
        }
        Ok(())
    }
}

/// Active corruptions for one batch, applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTag {
    pub active: Vec<DomainSpec>,
}

impl DomainTag {
    /// Corruption kinds joined by `+`, e.g. `rotation+additive_noise`.
    pub fn label(&self) -> String {
        self.active
            .iter()
            .map(|s| s.kind.name())
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Severities joined by `+`, matching [`DomainTag::label`].
    pub fn severity_label(&self) -> String {
        self.active
            .iter()
            .map(|s| format!("{}", s.severity))
            .collect::<Vec<_>>()
            .join("+")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamConfig {
    pub seed: u64,
    pub class_count: usize,
    pub dim: usize,
    pub spread: f64,
    pub schedule: Schedule,
    pub label_mode: LabelMode,
    pub corruption: CorruptionParams,
}

/// The part of a batch adaptation code may see.
#[derive(Debug, Clone)]
pub struct BatchView {
    pub features: Matrix,
    pub domain: DomainTag,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct Batch {
    view: BatchView,
    labels: Labels,
}

impl Batch {
    pub fn view(&self) -> &BatchView {
        &self.view
    }

    pub fn into_parts(self) -> (BatchView, Labels) {
        (self.view, self.labels)
    }
}

#[derive(Debug, Clone)]
struct DynamicSegment {
    kind_index: usize,
    severity: f64,
    end: usize,
}

/// Mutable stream position plus every generator it draws from.
#[derive(Debug, Clone)]
pub struct StreamState {
    config: StreamConfig,
    prototypes: Prototypes,
    corruptor: Corruptor,
    step: usize,
    label_rng: StreamRng,
    feature_rng: StreamRng,
    noise_rng: StreamRng,
    schedule_rng: StreamRng,
    label_weights: Option<WeightedIndex<f64>>,
    segment: Option<DynamicSegment>,
}

impl StreamState {
    pub fn new(config: StreamConfig) -> Result<Self> {
        config.schedule.validate()?;
        if let LabelMode::Dirichlet { delta, block } = config.label_mode {
            if !(delta > 0.0) || block == 0 {
                return Err(Error::Config("Dirichlet labels need delta > 0 and block > 0".into()));
            }
        }
        let prototypes = make_prototypes(config.seed, config.class_count, config.dim, config.spread)?;
        let corruptor = Corruptor::new(
            config.dim,
            config.corruption,
            &mut substream(config.seed, "corruptor"),
        );
        Ok(Self {
            prototypes,
            corruptor,
            step: 0,
            label_rng: substream(config.seed, "labels"),
            feature_rng: substream(config.seed, "features"),
            noise_rng: substream(config.seed, "noise"),
            schedule_rng: substream(config.seed, "schedule"),
            label_weights: None,
            segment: None,
            config,
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn prototypes(&self) -> &Prototypes {
        &self.prototypes
    }

    pub fn corruptor(&self) -> &Corruptor {
        &self.corruptor
    }

    pub fn step(&self) -> usize {
        self.step
    }

    /// Domain of a given step for the stateless schedules.
    pub fn smooth_or_recurring_tag(schedule: &Schedule, step: usize) -> Option<DomainTag> {
        match schedule {
            Schedule::Smooth {
                sequence,
                transition_speed,
                severity_step,
                severity_floor,
                severity_ceiling,
            } => {
                let span = severity_ceiling - severity_floor;
                let sub_steps = ((span / severity_step).round() as usize).max(1);
                let block = step / transition_speed;
                let transition = block / sub_steps;
                let frac = (block % sub_steps) as f64 / sub_steps as f64;
                let fading = sequence[transition % sequence.len()];
                let emerging = sequence[(transition + 1) % sequence.len()];
                let fade_sev = (severity_ceiling - span * frac).clamp(0.0, MAX_SEVERITY);
                let emerge_sev = (severity_floor + span * frac).clamp(0.0, MAX_SEVERITY);
                Some(DomainTag {
                    active: vec![
                        DomainSpec::new(fading, fade_sev).ok()?,
                        DomainSpec::new(emerging, emerge_sev).ok()?,
                    ],
                })
            }
            Schedule::Recurring {
                sequence,
                duration,
                severity,
                ..
            } => {
                let kind = sequence[(step / duration) % sequence.len()];
                Some(DomainTag {
                    active: vec![DomainSpec::new(kind, *severity).ok()?],
                })
            }
            Schedule::Dynamic { .. } => None,
        }
    }

    fn current_tag(&mut self) -> DomainTag {
        if let Some(tag) = Self::smooth_or_recurring_tag(&self.config.schedule, self.step) {
            return tag;
        }
        let Schedule::Dynamic {
            sequence,
            duration_set,
            severity_floor,
            severity_ceiling,
        } = &self.config.schedule
        else {
            unreachable!("stateless schedules handled above");
        };
        let need_new = self.segment.as_ref().is_none_or(|s| self.step >= s.end);
        if need_new {
            let kind_index = self
                .segment
                .as_ref()
                .map_or(0, |s| (s.kind_index + 1) % sequence.len());
            let duration = duration_set[self.schedule_rng.random_range(0..duration_set.len())];
            let severity = if severity_ceiling > severity_floor {
                self.schedule_rng
                    .random_range(*severity_floor..=*severity_ceiling)
            } else {
                *severity_floor
            };
            self.segment = Some(DynamicSegment {
                kind_index,
                severity,
                end: self.step + duration,
            });
        }
        let seg = self.segment.as_ref().expect("segment set above");
        DomainTag {
            active: vec![DomainSpec {
                kind: sequence[seg.kind_index],
                severity: seg.severity,
            }],
        }
    }

    fn draw_labels(&mut self, batch_size: usize) -> Vec<usize> {
        let c = self.config.class_count;
        match self.config.label_mode {
            LabelMode::IidUniform => (0..batch_size)
                .map(|_| self.label_rng.random_range(0..c))
                .collect(),
            LabelMode::Dirichlet { delta, block } => {
                if self.step.is_multiple_of(block) || self.label_weights.is_none() {
                    let w = dirichlet_label_weights(delta, c, &mut self.label_rng)
                        .expect("delta validated at construction");
                    self.label_weights =
                        Some(WeightedIndex::new(&w).expect("weights sum to one"));
                }
                let dist = self.label_weights.as_ref().expect("set above");
                (0..batch_size)
                    .map(|_| dist.sample(&mut self.label_rng))
                    .collect()
            }
        }
    }

    /// Emits the batch for the current step and advances by one.
    pub fn next_batch(&mut self, batch_size: usize) -> Result<Batch> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        let domain = self.current_tag();
        let labels = self.draw_labels(batch_size);
        let mut features = self.prototypes.sample(&labels, &mut self.feature_rng);
        for spec in &domain.active {
            features = self.corruptor.corrupt(&features, spec, &mut self.noise_rng)?;
        }
        let step = self.step;
        self.step += 1;
        Ok(Batch {
            view: BatchView {
                features,
                domain,
                step,
            },
            labels: Labels::new(labels),
        })
    }
}
