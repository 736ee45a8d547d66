//! One adaptation run: a strategy applied to a stream, step by step.
//!
//! Every step follows the same order:
//!
//! 1. logits `z_t` from the current parameters; loss (entropy plus the
//!    Fisher penalty when enabled); cumulative knowledge update with the
//!    pre-update parameters; one SGD step.
//! 2. prediction inconsistency `phi_t` between `z_t` and the source logits;
//!    penalty weight and baseline momentum are re-derived from it.
//! 3. concentration `C_t` from `z_t`; either update the baseline or reset.
//!
//! Accuracy is scored on `z_t`, i.e. before the update, and is the only
//! place labels are touched.

use std::fmt;
use std::str::FromStr;

use crate::asr::{
    prediction_concentration, prediction_inconsistency, select_reset_layers, should_reset,
    Adjuster, ConcentrationMetric, ConcentrationTracker, Hyperparameters, KnowledgeStore,
    ResetPolicy,
};
use crate::diffnet::{entropy_loss_and_grad, GradientSet, Matrix, Network, ParameterSnapshot};
use crate::driftgen::{BatchView, StreamState};
use crate::metrics::{batch_accuracy, final_window, ClassSet, Labels, WindowStats};
use crate::{Error, Result};

/// Component switches of the reset controller. All on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsrFlags {
    /// Trigger from concentration; off means a fixed period.
    pub adaptive_when: bool,
    /// Reset depth from the concentration gap; off means every layer.
    pub selective_where: bool,
    pub fisher_recovery: bool,
    pub adjust_lambda: bool,
    pub adjust_mu: bool,
}

impl Default for AsrFlags {
    fn default() -> Self {
        Self {
            adaptive_when: true,
            selective_where: true,
            fisher_recovery: true,
            adjust_lambda: true,
            adjust_mu: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    SourceOnly,
    NoResetEm,
    FixedIntervalFullReset { period: usize },
    FixedProportionReset { proportion: f64 },
    Asr {
        flags: AsrFlags,
        /// Reset period used when `adaptive_when` is off.
        period: usize,
    },
}

const ABLATIONS: [(&str, fn(&mut AsrFlags)); 5] = [
    ("no_when", |f| f.adaptive_when = false),
    ("no_where", |f| f.selective_where = false),
    ("no_fisher", |f| f.fisher_recovery = false),
    ("no_lambda", |f| f.adjust_lambda = false),
    ("no_mu", |f| f.adjust_mu = false),
];

impl Strategy {
    pub fn asr() -> Self {
        Strategy::Asr {
            flags: AsrFlags::default(),
            period: 100,
        }
    }

    pub fn is_adaptive(&self) -> bool {
        !matches!(self, Strategy::SourceOnly)
    }

    fn uses_fisher(&self) -> bool {
        matches!(self, Strategy::Asr { flags, .. } if flags.fisher_recovery)
    }
}

/// Names: `source_only`, `no_reset_em`, `fixed_interval:<T>`,
/// `fixed_proportion:<p>`, `asr`, `asr:<ablation>[,<ablation>...]` and an
/// optional `@<T>` suffix on `asr` for the fallback period.
impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::SourceOnly => write!(f, "source_only"),
            Strategy::NoResetEm => write!(f, "no_reset_em"),
            Strategy::FixedIntervalFullReset { period } => write!(f, "fixed_interval:{period}"),
            Strategy::FixedProportionReset { proportion } => write!(f, "fixed_proportion:{proportion}"),
            Strategy::Asr { flags, period } => {
                write!(f, "asr")?;
                let off: Vec<&str> = ABLATIONS
                    .iter()
                    .filter(|(_, set)| {
                        let mut probe = *flags;
                        set(&mut probe);
                        probe == *flags
                    })
                    .map(|(name, _)| *name)
                    .collect();
                if !off.is_empty() {
                    write!(f, ":{}", off.join(","))?;
                }
                if *period != 100 {
                    write!(f, "@{period}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown strategy `{s}`"));
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let (head, arg, asr_period) = match (head.split_once('@'), arg.and_then(|a| a.split_once('@'))) {
            (Some((h, p)), _) => (h, arg, Some(p)),
            (None, Some((a, p))) => (head, Some(a), Some(p)),
            (None, None) => (head, arg, None),
        };
        match (head, arg) {
            ("source_only", None) => Ok(Strategy::SourceOnly),
            ("no_reset_em", None) => Ok(Strategy::NoResetEm),
            ("fixed_interval", Some(a)) => {
                let period: usize = a.parse().map_err(|_| bad())?;
                if period == 0 {
                    return Err(bad());
                }
                Ok(Strategy::FixedIntervalFullReset { period })
            }
            ("fixed_proportion", Some(a)) => {
                let proportion: f64 = a.parse().map_err(|_| bad())?;
                if !(proportion > 0.0 && proportion <= 1.0) {
                    return Err(bad());
                }
                Ok(Strategy::FixedProportionReset { proportion })
            }
            ("asr", arg) => {
                let mut flags = AsrFlags::default();
                for name in arg.iter().flat_map(|a| a.split(',')).filter(|n| !n.is_empty()) {
                    let (_, set) = ABLATIONS.iter().find(|(n, _)| *n == name).ok_or_else(bad)?;
                    set(&mut flags);
                }
                let period = match asr_period {
                    Some(p) => p.parse().ok().filter(|p| *p > 0).ok_or_else(bad)?,
                    None => 100,
                };
                Ok(Strategy::Asr { flags, period })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub hyper: Hyperparameters,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub horizon: usize,
    pub metric: ConcentrationMetric,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            learning_rate: 0.05,
            batch_size: 32,
            horizon: 1000,
            metric: ConcentrationMetric::SoftmaxOfMean,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if self.horizon == 0 || self.batch_size == 0 {
            return Err(Error::Config("horizon and batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// One logged step. `step` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub domain: String,
    pub severity: String,
    pub accuracy: f64,
    pub c_t: f64,
    /// Baseline after this step: updated, or re-initialized if a reset fired.
    pub bar_c: f64,
    pub phi_t: f64,
    pub lambda_f: f64,
    pub mu_c: f64,
    pub reset: bool,
    /// Reset proportion, 0 when no reset fired.
    pub r_t: f64,
    pub layers_reset: usize,
    pub predicted: ClassSet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// Numeric failure at the given step; rows stop before it.
    Aborted { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub strategy: String,
    pub class_count: usize,
    pub layer_count: usize,
    /// Baseline value before step 1.
    pub initial_bar_c: f64,
    pub rows: Vec<StepRow>,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub mean_accuracy: f64,
    pub reset_count: usize,
    pub final_window: WindowStats,
}

impl RunRecord {
    pub fn reset_count(&self) -> usize {
        self.rows.iter().filter(|r| r.reset).count()
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.accuracy).sum::<f64>() / self.rows.len() as f64
    }

    pub fn summary(&self, window: usize) -> Result<RunSummary> {
        Ok(RunSummary {
            mean_accuracy: self.mean_accuracy(),
            reset_count: self.reset_count(),
            final_window: final_window(self, window)?,
        })
    }
}

/// Result of [`total_loss`].
#[derive(Debug, Clone)]
pub struct LossEval {
    pub logits: Matrix,
    pub entropy: f64,
    pub penalty: f64,
    pub grads: GradientSet,
}

impl LossEval {
    pub fn total(&self) -> f64 {
        self.entropy + self.penalty
    }
}

/// Mean prediction entropy plus the Fisher penalty, with the exact gradient
/// of the sum. `knowledge = None` means entropy only.
pub fn total_loss(
    net: &Network,
    features: &Matrix,
    knowledge: Option<(&KnowledgeStore, f64)>,
) -> Result<LossEval> {
    let (logits, trace) = net.forward(features)?;
    let (entropy, up) = entropy_loss_and_grad(&logits)?;
    let mut grads = net.backward(&trace, &up)?;
    let mut penalty = 0.0;
    if let Some((store, lambda_f)) = knowledge {
        let (p, pg) = store.penalty(&net.snapshot(), lambda_f)?;
        penalty = p;
        grads.add_scaled(&pg, 1.0)?;
    }
    if !(entropy + penalty).is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    Ok(LossEval {
        logits,
        entropy,
        penalty,
        grads,
    })
}

/// What an observer sees after each step.
pub struct StepObservation<'a> {
    pub row: &'a StepRow,
    /// Baseline before this step's update or reset.
    pub prev_bar_c: f64,
    pub reset_layers: &'a [usize],
    pub net: &'a Network,
    pub knowledge: Option<&'a KnowledgeStore>,
}

/// Per-run controller state.
struct Controller {
    strategy: Strategy,
    hyper: Hyperparameters,
    tracker: ConcentrationTracker,
    policy: ResetPolicy,
    adjuster: Adjuster,
    knowledge: Option<KnowledgeStore>,
    learning_rate: f64,
}

impl Controller {
    fn lambda_f(&self) -> f64 {
        match self.strategy {
            Strategy::Asr { flags, .. } if flags.fisher_recovery => {
                if flags.adjust_lambda {
                    self.adjuster.lambda_f()
                } else {
                    self.hyper.lambda_f
                }
            }
            _ => 0.0,
        }
    }

    fn mu_c(&self) -> f64 {
        match self.strategy {
            Strategy::Asr { flags, .. } if flags.adjust_mu => self.adjuster.mu_c(),
            _ => self.hyper.mu_c,
        }
    }

    /// Returns the reset proportion if a reset fires at 1-based step `t`.
    fn decide(&self, t: usize, c_t: f64) -> Option<f64> {
        let bar = self.tracker.bar_c();
        match self.strategy {
            Strategy::SourceOnly | Strategy::NoResetEm => None,
            Strategy::FixedIntervalFullReset { period } => t.is_multiple_of(period).then_some(1.0),
            Strategy::FixedProportionReset { proportion } => {
                should_reset(c_t, bar, self.hyper.delay_epsilon).then_some(proportion)
            }
            Strategy::Asr { flags, period } => {
                let fire = if flags.adaptive_when {
                    should_reset(c_t, bar, self.policy.delay_epsilon)
                } else {
                    t.is_multiple_of(period)
                };
                if !fire {
                    return None;
                }
                if !flags.selective_where {
                    return Some(1.0);
                }
                Some(
                    self.policy
                        .reset_proportion(c_t, bar)
                        .unwrap_or(self.policy.r_0),
                )
            }
        }
    }
}

pub fn run(
    strategy: Strategy,
    stream: &mut StreamState,
    net: Network,
    source: &ParameterSnapshot,
    config: &RunConfig,
) -> Result<RunRecord> {
    run_observed(strategy, stream, net, source, config, |_| {})
}

/// Like [`run`], calling `observer` after every completed step.
pub fn run_observed<F>(
    strategy: Strategy,
    stream: &mut StreamState,
    mut net: Network,
    source: &ParameterSnapshot,
    config: &RunConfig,
    mut observer: F,
) -> Result<RunRecord>
where
    F: FnMut(&StepObservation<'_>),
{
    config.validate()?;
    if net.input_dim() != stream.config().dim || net.class_count() != stream.config().class_count {
        return Err(Error::Shape(format!(
            "network maps {} -> {}, stream has {} features and {} classes",
            net.input_dim(),
            net.class_count(),
            stream.config().dim,
            stream.config().class_count
        )));
    }
    if !net.snapshot().is_congruent(source) {
        return Err(Error::Shape("source snapshot does not match the network".into()));
    }
    let mut source_net = net.clone();
    source_net.load(source)?;

    let hyper = config.hyper;
    let mut ctl = Controller {
        strategy,
        hyper,
        tracker: ConcentrationTracker::new(hyper.alpha_0, net.class_count(), config.metric)?,
        policy: ResetPolicy::from_hyper(&hyper),
        adjuster: Adjuster::new(hyper.lambda_0, hyper.mu_0),
        knowledge: strategy
            .uses_fisher()
            .then(|| KnowledgeStore::new(source, hyper.mu_f, hyper.mu_theta)),
        learning_rate: config.learning_rate,
    };
    let mut record = RunRecord {
        strategy: strategy.to_string(),
        class_count: net.class_count(),
        layer_count: net.layer_count(),
        initial_bar_c: ctl.tracker.bar_c(),
        rows: Vec::with_capacity(config.horizon),
        outcome: RunOutcome::Completed,
    };

    for t in 1..=config.horizon {
        let (view, labels) = stream.next_batch(config.batch_size)?.into_parts();
        match step(t, &mut ctl, &mut net, &source_net, source, &view, &labels) {
            Ok((row, prev_bar_c, reset_layers)) => {
                record.rows.push(row);
                observer(&StepObservation {
                    row: record.rows.last().expect("pushed above"),
                    prev_bar_c,
                    reset_layers: &reset_layers,
                    net: &net,
                    knowledge: ctl.knowledge.as_ref(),
                });
            }
            Err(e @ (Error::Numeric(_) | Error::NonFiniteInput(_))) => {
                record.outcome = RunOutcome::Aborted {
                    step: t,
                    reason: e.to_string(),
                };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(record)
}

fn step(
    t: usize,
    ctl: &mut Controller,
    net: &mut Network,
    source_net: &Network,
    source: &ParameterSnapshot,
    view: &BatchView,
    labels: &Labels,
) -> Result<(StepRow, f64, Vec<usize>)> {
    // 1) adaptation
    let logits = if ctl.strategy.is_adaptive() {
        let lambda_f = ctl.lambda_f();
        let eval = total_loss(net, &view.features, ctl.knowledge.as_ref().map(|k| (k, lambda_f)))?;
        if let Some(store) = ctl.knowledge.as_mut() {
            store.cma_accumulate(&net.snapshot(), &eval.grads)?;
        }
        net.sgd_step(&eval.grads, ctl.learning_rate)?;
        eval.logits
    } else {
        net.logits(&view.features)?
    };
    let accuracy = batch_accuracy(&logits, labels)?;
    let predictions = logits.argmax_rows();

    // 2) on-the-fly adjustment
    let phi_t = if ctl.strategy.is_adaptive() {
        prediction_inconsistency(&source_net.logits(&view.features)?, &logits)?
    } else {
        0.0
    };
    ctl.adjuster.adjust(phi_t);

    // 3) when and where to reset
    let c_t = prediction_concentration(&logits, ctl.tracker.metric())?;
    let prev_bar_c = ctl.tracker.bar_c();
    let mut reset_layers = Vec::new();
    let mut r_t = 0.0;
    match ctl.decide(t, c_t) {
        None => {
            ctl.tracker.update_cumulative(c_t, ctl.mu_c());
        }
        Some(r) => {
            r_t = r;
            reset_layers = select_reset_layers(net.layer_count(), r);
            net.restore_layers(source, &reset_layers)?;
            ctl.tracker.reinit_cumulative();
            if let Some(store) = ctl.knowledge.as_mut() {
                store.ema_aggregate_on_reset();
            }
        }
    }

    let row = StepRow {
        step: t,
        domain: view.domain.label(),
        severity: view.domain.severity_label(),
        accuracy,
        c_t,
        bar_c: ctl.tracker.bar_c(),
        phi_t,
        lambda_f: ctl.lambda_f(),
        mu_c: ctl.mu_c(),
        reset: !reset_layers.is_empty(),
        r_t,
        layers_reset: reset_layers.len(),
        predicted: ClassSet::from_predictions(&predictions),
    };
    Ok((row, prev_bar_c, reset_layers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driftgen::{make_prototypes, CorruptionParams, DomainKind, LabelMode, Schedule, StreamConfig};
    use crate::source::{train_source, SourceTraining};
    use proptest::{prop_assert_eq, proptest};

    fn setup(horizon: usize) -> (StreamState, Network, RunConfig) {
        let protos = make_prototypes(5, 10, 16, 0.5).unwrap();
        let training = SourceTraining {
            steps: 300,
            ..SourceTraining::default()
        };
        let net = train_source(&protos, &training, 5).unwrap();
        let stream = StreamState::new(StreamConfig {
            seed: 5,
            class_count: 10,
            dim: 16,
            spread: 0.5,
            schedule: Schedule::Recurring {
                sequence: DomainKind::ALL.to_vec(),
                duration: 50,
                revisit_count: 2,
                severity: 5.0,
            },
            label_mode: LabelMode::IidUniform,
            corruption: CorruptionParams::default(),
        })
        .unwrap();
        let config = RunConfig {
            horizon,
            ..RunConfig::default()
        };
        (stream, net, config)
    }

    fn resets(record: &RunRecord) -> Vec<usize> {
        record.rows.iter().filter(|r| r.reset).map(|r| r.step).collect()
    }

    #[test]
    fn fixed_interval_resets_on_multiples() {
        let (mut stream, net, config) = setup(350);
        let source = net.snapshot();
        let rec = run("fixed_interval:100".parse().unwrap(), &mut stream, net, &source, &config).unwrap();
        assert_eq!(resets(&rec), [100, 200, 300]);
        assert!(rec.rows.iter().filter(|r| r.reset).all(|r| r.layers_reset == 3 && r.r_t == 1.0));
    }

    #[test]
    fn fixed_period_ablation_keeps_fixed_timing_and_selective_scope() {
        let (stream, net, config) = setup(350);
        let source = net.snapshot();
        let fixed = run("fixed_interval:70".parse().unwrap(), &mut stream.clone(), net.clone(), &source, &config).unwrap();
        let ablated = run("asr:no_when@70".parse().unwrap(), &mut stream.clone(), net, &source, &config).unwrap();
        assert_eq!(resets(&ablated), resets(&fixed));
        assert!(ablated.rows.iter().filter(|r| r.reset).all(|r| r.r_t >= 0.5 && r.r_t <= 1.0));
    }

    #[test]
    fn full_scope_ablation_restores_every_layer() {
        let (mut stream, net, config) = setup(300);
        let source = net.snapshot();
        let rec = run("asr:no_where".parse().unwrap(), &mut stream, net, &source, &config).unwrap();
        assert!(rec.reset_count() > 0);
        assert!(rec.rows.iter().filter(|r| r.reset).all(|r| r.layers_reset == 3));
    }

    #[test]
    fn reset_restores_the_selected_layers() {
        let (mut stream, net, config) = setup(300);
        let source = net.snapshot();
        let init = -(0.5f64 * 10.0).ln();
        let mut seen = 0;
        run_observed(Strategy::asr(), &mut stream, net, &source, &config, |o| {
            if o.row.reset {
                seen += 1;
                assert_eq!(o.row.bar_c, init);
                for &l in o.reset_layers {
                    assert_eq!(o.net.layers()[l].params(), source.layer(l));
                }
                let k = o.knowledge.unwrap();
                assert!(k.tilde_f().is_zero() && k.tilde_theta().is_zero());
            }
        })
        .unwrap();
        assert!(seen > 0);
    }

    #[test]
    fn source_only_never_moves() {
        let (mut stream, net, config) = setup(50);
        let source = net.snapshot();
        let rec = run_observed(Strategy::SourceOnly, &mut stream, net, &source, &config, |o| {
            assert_eq!(o.net.snapshot(), source);
            assert!(o.knowledge.is_none());
        })
        .unwrap();
        assert!(rec.rows.iter().all(|r| !r.reset && r.phi_t == 0.0));
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let (mut stream, _, config) = setup(5);
        let net = Network::random(&[16, 8, 4], &mut crate::seed::substream(0, "t")).unwrap();
        let source = net.snapshot();
        assert!(matches!(run(Strategy::asr(), &mut stream, net, &source, &config), Err(Error::Shape(_))));
    }

    #[test]
    fn named_strategies() {
        for name in ["source_only", "no_reset_em", "fixed_interval:100", "fixed_proportion:0.25", "asr", "asr:no_fisher,no_mu", "asr:no_when@50"] {
            assert_eq!(name.parse::<Strategy>().unwrap().to_string(), name);
        }
        for bad in ["asr:no_such", "fixed_interval:0", "fixed_proportion:1.5", "asr@0", "em"] {
            assert!(bad.parse::<Strategy>().is_err(), "{bad}");
        }
    }

    proptest! {
        #[test]
        fn strategy_names_round_trip(mask in 0u8..32, period in 1usize..500) {
            let flags = AsrFlags {
                adaptive_when: mask & 1 == 0,
                selective_where: mask & 2 == 0,
                fisher_recovery: mask & 4 == 0,
                adjust_lambda: mask & 8 == 0,
                adjust_mu: mask & 16 == 0,
            };
            let s = Strategy::Asr { flags, period };
            prop_assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
    }
}
