//! Adaptive and selective reset controller.
//!
//! Pieces, in the order a step uses them:
//!
//! - [`prediction_concentration`] turns a batch of logits into `C_t`, the
//!   negative entropy of the softmax of the batch-mean logits.
//! - [`ConcentrationTracker`] keeps the cumulative baseline `bar_C`.
//! - [`should_reset`], [`ResetPolicy::reset_proportion`] and
//!   [`select_reset_layers`] decide when and how deep to reset.
//! - [`KnowledgeStore`] accumulates parameters and squared gradients with a
//!   per-step cumulative average that is folded into an exponential average
//!   at every reset; [`fisher_penalty`] pulls parameters back toward it.
//! - [`Adjuster`] rescales the penalty weight and the baseline momentum from
//!   the source/current prediction inconsistency.

use crate::diffnet::{softmax_rows, GradientSet, Matrix, ParamSet};
use crate::{Error, Result};

/// Controller hyperparameters. Defaults are the reference values; the
/// desk-scale experiment configs override a few of them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparameters {
    /// Initial cumulative concentration is `-ln(alpha_0 * C)`.
    pub alpha_0: f64,
    /// Baseline momentum used when the momentum adjuster is disabled.
    pub mu_c: f64,
    pub r_0: f64,
    pub lambda_r: f64,
    /// Penalty weight used when the penalty adjuster is disabled.
    pub lambda_f: f64,
    pub lambda_0: f64,
    pub mu_0: f64,
    pub mu_f: f64,
    pub mu_theta: f64,
    /// Reset fires only when `C_t - bar_C > delay_epsilon`.
    pub delay_epsilon: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            alpha_0: 0.5,
            mu_c: 0.995,
            r_0: 0.5,
            lambda_r: 20.0,
            lambda_f: 5.0,
            lambda_0: 5.0,
            mu_0: 0.15,
            mu_f: 0.9,
            mu_theta: 0.9,
            delay_epsilon: 0.0,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64, lo_open: bool| {
            let ok = if lo_open { v > 0.0 && v <= 1.0 } else { (0.0..=1.0).contains(&v) };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} out of range")))
            }
        };
        unit("alpha_0", self.alpha_0, true)?;
        unit("mu_c", self.mu_c, false)?;
        unit("r_0", self.r_0, true)?;
        unit("mu_0", self.mu_0, false)?;
        if !(0.0..1.0).contains(&self.mu_f) || !(0.0..1.0).contains(&self.mu_theta) {
            return Err(Error::Config("mu_f and mu_theta must lie in [0, 1)".into()));
        }
        for (name, v) in [
            ("lambda_r", self.lambda_r),
            ("lambda_f", self.lambda_f),
            ("lambda_0", self.lambda_0),
            ("delay_epsilon", self.delay_epsilon),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConcentrationMetric {
    /// Softmax of the batch-mean logits.
    #[default]
    SoftmaxOfMean,
    /// Batch mean of per-sample softmax outputs.
    MeanOfSoftmax,
}

impl ConcentrationMetric {
    pub fn name(self) -> &'static str {
        match self {
            ConcentrationMetric::SoftmaxOfMean => "softmax_of_mean",
            ConcentrationMetric::MeanOfSoftmax => "mean_of_softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "softmax_of_mean" => Ok(Self::SoftmaxOfMean),
            "mean_of_softmax" => Ok(Self::MeanOfSoftmax),
            other => Err(Error::Config(format!("unknown concentration metric `{other}`"))),
        }
    }
}

/// `C_t = sum_c p_c ln p_c`, in `[-ln C, 0]`.
pub fn prediction_concentration(logits: &Matrix, metric: ConcentrationMetric) -> Result<f64> {
    if logits.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let p = match metric {
        ConcentrationMetric::SoftmaxOfMean => {
            let mean = Matrix::new(1, logits.cols(), logits.column_means())?;
            softmax_rows(&mean)?.into_vec()
        }
        ConcentrationMetric::MeanOfSoftmax => softmax_rows(logits)?.column_means(),
    };
    Ok(p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum())
}

/// Cumulative concentration `bar_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationTracker {
    bar_c: f64,
    alpha_0: f64,
    class_count: usize,
    metric: ConcentrationMetric,
}

impl ConcentrationTracker {
    pub fn new(alpha_0: f64, class_count: usize, metric: ConcentrationMetric) -> Result<Self> {
        if !(alpha_0 > 0.0 && alpha_0 <= 1.0) || class_count < 2 {
            return Err(Error::Config(format!(
                "tracker needs alpha_0 in (0, 1] and at least 2 classes, got {alpha_0}, {class_count}"
            )));
        }
        let mut tracker = Self {
            bar_c: 0.0,
            alpha_0,
            class_count,
            metric,
        };
        tracker.reinit_cumulative();
        Ok(tracker)
    }

    pub fn initial_value(&self) -> f64 {
        -(self.alpha_0 * self.class_count as f64).ln()
    }

    pub fn bar_c(&self) -> f64 {
        self.bar_c
    }

    pub fn metric(&self) -> ConcentrationMetric {
        self.metric
    }

    pub fn concentration(&self, logits: &Matrix) -> Result<f64> {
        prediction_concentration(logits, self.metric)
    }

    /// `bar_C <- mu_C * bar_C + (1 - mu_C) * C_t`.
    pub fn update_cumulative(&mut self, c_t: f64, mu_c: f64) -> f64 {
        self.bar_c = mu_c * self.bar_c + (1.0 - mu_c) * c_t;
        self.bar_c
    }

    pub fn reinit_cumulative(&mut self) {
        self.bar_c = self.initial_value();
    }
}

/// True iff `C_t - bar_C > delay_epsilon`; equality never fires.
pub fn should_reset(c_t: f64, bar_c: f64, delay_epsilon: f64) -> bool {
    c_t - bar_c > delay_epsilon
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetPolicy {
    pub r_0: f64,
    pub lambda_r: f64,
    pub delay_epsilon: f64,
}

impl ResetPolicy {
    pub fn from_hyper(h: &Hyperparameters) -> Self {
        Self {
            r_0: h.r_0,
            lambda_r: h.lambda_r,
            delay_epsilon: h.delay_epsilon,
        }
    }

    /// `r_t = min(1, r_0 + lambda_r * (C_t - bar_C))`, defined only when the
    /// concentration exceeds its baseline.
    pub fn reset_proportion(&self, c_t: f64, bar_c: f64) -> Result<f64> {
        let gap = c_t - bar_c;
        if !(gap > 0.0) {
            return Err(Error::Contract(format!(
                "reset proportion needs C_t > bar_C, got gap {gap}"
            )));
        }
        Ok((self.r_0 + self.lambda_r * gap).clamp(self.r_0, 1.0))
    }
}

pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// The deepest `max(1, round_half_up(r_t * L))` layer indices, ascending.
pub fn select_reset_layers(layer_count: usize, r_t: f64) -> Vec<usize> {
    let n = round_half_up(r_t * layer_count as f64).clamp(1, layer_count.max(1));
    (layer_count.saturating_sub(n)..layer_count).collect()
}

/// `lambda_F * sum_i bar_F_i (theta_i - bar_theta_i)^2` and its gradient
/// `2 lambda_F bar_F_i (theta_i - bar_theta_i)`.
pub fn fisher_penalty(
    params: &ParamSet,
    bar_f: &ParamSet,
    bar_theta: &ParamSet,
    lambda_f: f64,
) -> Result<(f64, GradientSet)> {
    params.check_congruent(bar_f, "fisher_penalty")?;
    params.check_congruent(bar_theta, "fisher_penalty")?;
    let mut grad = ParamSet::zeros_like(params);
    let mut total = 0.0;
    for (((g, theta), f), anchor) in grad
        .iter_mut()
        .zip(params.iter())
        .zip(bar_f.iter())
        .zip(bar_theta.iter())
    {
        let diff = theta - anchor;
        total += f * diff * diff;
        *g = 2.0 * lambda_f * f * diff;
    }
    Ok((lambda_f * total, grad))
}

/// Cumulative (since last reset) and exponential (across resets) averages of
/// parameters and squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    tilde_f: ParamSet,
    tilde_theta: ParamSet,
    bar_f: ParamSet,
    bar_theta: ParamSet,
    mu_f: f64,
    mu_theta: f64,
    count_since_reset: usize,
}

impl KnowledgeStore {
    /// All four stores start at zero, shaped like `like`.
    pub fn new(like: &ParamSet, mu_f: f64, mu_theta: f64) -> Self {
        let zeros = ParamSet::zeros_like(like);
        Self {
            tilde_f: zeros.clone(),
            tilde_theta: zeros.clone(),
            bar_f: zeros.clone(),
            bar_theta: zeros,
            mu_f,
            mu_theta,
            count_since_reset: 0,
        }
    }

    pub fn tilde_f(&self) -> &ParamSet {
        &self.tilde_f
    }

    pub fn tilde_theta(&self) -> &ParamSet {
        &self.tilde_theta
    }

    pub fn bar_f(&self) -> &ParamSet {
        &self.bar_f
    }

    pub fn bar_theta(&self) -> &ParamSet {
        &self.bar_theta
    }

    pub fn count_since_reset(&self) -> usize {
        self.count_since_reset
    }

    /// One cumulative-average step with the pre-update parameters and the
    /// gradient of the total loss.
    pub fn cma_accumulate(&mut self, params: &ParamSet, grads: &GradientSet) -> Result<()> {
        self.tilde_theta.check_congruent(params, "cma_accumulate")?;
        self.tilde_f.check_congruent(grads, "cma_accumulate")?;
        let n = self.count_since_reset as f64;
        let inv = 1.0 / (n + 1.0);
        for (f, g) in self.tilde_f.iter_mut().zip(grads.iter()) {
            *f = (n * *f + g * g) * inv;
        }
        for (t, p) in self.tilde_theta.iter_mut().zip(params.iter()) {
            *t = (n * *t + p) * inv;
        }
        self.count_since_reset += 1;
        Ok(())
    }

    /// Folds the cumulative averages into the exponential ones, then clears
    /// the cumulative stores.
    pub fn ema_aggregate_on_reset(&mut self) {
        for (b, t) in self.bar_f.iter_mut().zip(self.tilde_f.iter()) {
            *b = self.mu_f * *b + (1.0 - self.mu_f) * t;
        }
        for (b, t) in self.bar_theta.iter_mut().zip(self.tilde_theta.iter()) {
            *b = self.mu_theta * *b + (1.0 - self.mu_theta) * t;
        }
        self.tilde_f.fill_zero();
        self.tilde_theta.fill_zero();
        self.count_since_reset = 0;
    }

    pub fn penalty(&self, params: &ParamSet, lambda_f: f64) -> Result<(f64, GradientSet)> {
        fisher_penalty(params, &self.bar_f, &self.bar_theta, lambda_f)
    }
}

/// Fraction of rows whose argmax differs between the two logit matrices.
pub fn prediction_inconsistency(source_logits: &Matrix, current_logits: &Matrix) -> Result<f64> {
    if source_logits.shape() != current_logits.shape() {
        return Err(Error::Shape(format!(
            "source logits {:?} vs current logits {:?}",
            source_logits.shape(),
            current_logits.shape()
        )));
    }
    if source_logits.rows() == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let differ = source_logits
        .argmax_rows()
        .into_iter()
        .zip(current_logits.argmax_rows())
        .filter(|(a, b)| a != b)
        .count();
    Ok(differ as f64 / source_logits.rows() as f64)
}

/// `(lambda_F, mu_C) = (lambda_0 phi^2, mu_0 phi + 1 - mu_0)`.
pub fn reparameterize(phi: f64, lambda_0: f64, mu_0: f64) -> (f64, f64) {
    // mu_0 phi + 1 - mu_0, arranged so phi = 1 gives exactly 1.
    (lambda_0 * phi * phi, 1.0 - mu_0 * (1.0 - phi))
}

/// Current penalty weight and baseline momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjuster {
    pub lambda_0: f64,
    pub mu_0: f64,
    lambda_f: f64,
    mu_c: f64,
}

impl Adjuster {
    pub fn new(lambda_0: f64, mu_0: f64) -> Self {
        let (lambda_f, mu_c) = reparameterize(0.0, lambda_0, mu_0);
        Self {
            lambda_0,
            mu_0,
            lambda_f,
            mu_c,
        }
    }

    pub fn adjust(&mut self, phi: f64) -> (f64, f64) {
        let (l, m) = reparameterize(phi.clamp(0.0, 1.0), self.lambda_0, self.mu_0);
        self.lambda_f = l;
        self.mu_c = m;
        (l, m)
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn mu_c(&self) -> f64 {
        self.mu_c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::LayerParams;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn scalar(v: f64) -> ParamSet {
        ParamSet::new(vec![LayerParams {
            weights: Matrix::new(1, 1, vec![v]).unwrap(),
            bias: vec![],
        }])
    }

    #[test]
    fn concentration_examples() {
        let c = prediction_concentration(&Matrix::zeros(3, 10), ConcentrationMetric::SoftmaxOfMean)
            .unwrap();
        assert!((c + 10f64.ln()).abs() < 1e-12);

        let c = prediction_concentration(&m(&[vec![2.0, 0.0], vec![0.0, 2.0]]), Default::default())
            .unwrap();
        assert!((c + 2f64.ln()).abs() < 1e-12);

        // Two-class closed form with p = 1 / (1 + e^-10).
        let p = 1.0 / (1.0 + (-10f64).exp());
        let want = p * p.ln() + (1.0 - p) * (1.0 - p).ln();
        let c = prediction_concentration(&m(&[vec![10.0, 0.0]]), Default::default()).unwrap();
        assert!((c - want).abs() < 1e-15);
        assert!((c + 4.994e-4).abs() < 1e-6);

        assert!(prediction_concentration(&Matrix::zeros(0, 3), Default::default()).is_err());
    }

    #[test]
    fn metric_modes_differ_on_confident_disagreement() {
        let z = m(&[vec![20.0, 0.0], vec![0.0, 21.0]]);
        let som = prediction_concentration(&z, ConcentrationMetric::SoftmaxOfMean).unwrap();
        let mos = prediction_concentration(&z, ConcentrationMetric::MeanOfSoftmax).unwrap();
        assert!(som > -0.7 && mos < -0.69);
    }

    #[test]
    fn cumulative_update_examples() {
        let mut t = ConcentrationTracker::new(0.5, 10, Default::default()).unwrap();
        t.bar_c = -6.0;
        assert!((t.update_cumulative(-2.0, 0.995) + 5.98).abs() < 1e-12);
        assert_eq!(t.update_cumulative(-1.0, 1.0), t.bar_c);
        assert_eq!(t.update_cumulative(-1.5, 0.0), -1.5);
    }

    #[test]
    fn reinit_examples() {
        let mut t = ConcentrationTracker::new(0.5, 1000, Default::default()).unwrap();
        t.update_cumulative(0.0, 0.0);
        t.reinit_cumulative();
        assert!((t.bar_c() + 500f64.ln()).abs() < 1e-12);
        assert!((t.bar_c() + 6.2146).abs() < 1e-4);

        let t = ConcentrationTracker::new(1.0, 10, Default::default()).unwrap();
        assert!((t.bar_c() + 10f64.ln()).abs() < 1e-12);

        let t = ConcentrationTracker::new(0.5, 10, Default::default()).unwrap();
        assert!((t.bar_c() + 5f64.ln()).abs() < 1e-12);
        assert!(t.bar_c() > -(10f64.ln()));
        assert!(ConcentrationTracker::new(0.0, 10, Default::default()).is_err());
    }

    #[test]
    fn trigger_examples() {
        assert!(should_reset(-2.0, -3.0, 0.0));
        assert!(!should_reset(-2.0, -2.0, 0.0));
        assert!(!should_reset(-1.995, -2.0, 0.01));
        assert!(should_reset(-1.985, -2.0, 0.01));
    }

    #[test]
    fn proportion_examples() {
        let p = ResetPolicy::from_hyper(&Hyperparameters::default());
        assert!((p.reset_proportion(-1.99, -2.0).unwrap() - 0.7).abs() < 1e-9);
        assert_eq!(p.reset_proportion(-1.95, -2.0).unwrap(), 1.0);
        assert!((p.reset_proportion(-2.0 + 1e-12, -2.0).unwrap() - 0.5).abs() < 1e-9);
        assert!(matches!(p.reset_proportion(-2.0, -2.0), Err(Error::Contract(_))));
        assert!(p.reset_proportion(-3.0, -2.0).is_err());
    }

    #[test]
    fn layer_selection_examples() {
        assert_eq!(select_reset_layers(15, 0.5), (7..15).collect::<Vec<_>>());
        assert_eq!(select_reset_layers(4, 1.0), vec![0, 1, 2, 3]);
        assert_eq!(select_reset_layers(10, 0.55), (4..10).collect::<Vec<_>>());
        assert_eq!(select_reset_layers(3, 0.1), vec![2]);
        assert_eq!(select_reset_layers(3, 0.5), vec![1, 2]);
    }

    #[test]
    fn penalty_examples() {
        let (p, g) = fisher_penalty(&scalar(2.0), &scalar(3.0), &scalar(1.0), 5.0).unwrap();
        assert_eq!(p, 15.0);
        assert_eq!(g.to_flat(), vec![30.0]);

        let (p, g) = fisher_penalty(&scalar(2.0), &scalar(0.0), &scalar(1.0), 5.0).unwrap();
        assert_eq!(p, 0.0);
        assert!(g.is_zero());
    }

    #[test]
    fn cma_first_call_copies() {
        let mut s = KnowledgeStore::new(&scalar(0.0), 0.9, 0.9);
        s.cma_accumulate(&scalar(2.0), &scalar(3.0)).unwrap();
        assert_eq!(s.tilde_theta().to_flat(), vec![2.0]);
        assert_eq!(s.tilde_f().to_flat(), vec![9.0]);
        s.cma_accumulate(&scalar(4.0), &scalar(0.0)).unwrap();
        s.cma_accumulate(&scalar(6.0), &scalar(0.0)).unwrap();
        assert!((s.tilde_theta().to_flat()[0] - 4.0).abs() < 1e-15);
        assert_eq!(s.count_since_reset(), 3);
        assert!(s.cma_accumulate(&ParamSet::new(vec![]), &scalar(0.0)).is_err());
    }

    #[test]
    fn ema_examples() {
        let mut s = KnowledgeStore::new(&scalar(0.0), 0.9, 0.9);
        s.tilde_f = scalar(10.0);
        s.tilde_theta = scalar(4.0);
        s.count_since_reset = 3;
        s.ema_aggregate_on_reset();
        assert!((s.bar_f().to_flat()[0] - 1.0).abs() < 1e-15);
        assert!((s.bar_theta().to_flat()[0] - 0.4).abs() < 1e-15);
        assert!(s.tilde_f().is_zero() && s.tilde_theta().is_zero());
        assert_eq!(s.count_since_reset(), 0);
    }

    #[test]
    fn inconsistency_examples() {
        let a = m(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(prediction_inconsistency(&a, &a).unwrap(), 0.0);
        let flipped = a.scaled(-1.0);
        // Row 4 ties in both: lowest index, no mismatch.
        assert_eq!(prediction_inconsistency(&a, &flipped).unwrap(), 0.75);
        let b = m(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(prediction_inconsistency(&a, &b).unwrap(), 0.25);
        let c = m(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(prediction_inconsistency(&c, &c.scaled(-1.0)).unwrap(), 1.0);
        assert!(prediction_inconsistency(&a, &c).is_err());
    }

    #[test]
    fn reparameterize_examples() {
        assert_eq!(reparameterize(0.0, 5.0, 0.15), (0.0, 0.85));
        assert_eq!(reparameterize(1.0, 5.0, 0.15), (5.0, 1.0));
        let (l, m) = reparameterize(0.5, 5.0, 0.15);
        assert_eq!(l, 1.25);
        assert!((m - 0.925).abs() < 1e-15);
    }

    #[test]
    fn defaults_validate() {
        Hyperparameters::default().validate().unwrap();
        let bad = Hyperparameters {
            r_0: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn adjusted_values_stay_in_range(phi in 0.0f64..=1.0, l0 in 0.0f64..10.0, m0 in 0.0f64..=1.0) {
            let (l, m) = reparameterize(phi, l0, m0);
            prop_assert!((0.0..=l0).contains(&l));
            prop_assert!(m >= 1.0 - m0 - 1e-15 && m <= 1.0 + 1e-15);
        }

        #[test]
        fn concentration_is_bounded(
            vals in proptest::collection::vec(-50.0f64..50.0, 12),
            mode in prop_oneof![Just(ConcentrationMetric::SoftmaxOfMean), Just(ConcentrationMetric::MeanOfSoftmax)],
        ) {
            let z = Matrix::new(3, 4, vals).unwrap();
            let c = prediction_concentration(&z, mode).unwrap();
            prop_assert!(c <= 1e-12 && c >= -(4f64.ln()) - 1e-12);
        }

        #[test]
        fn selected_layers_are_a_deepest_suffix(l in 1usize..40, r in 0.001f64..=1.0) {
            let sel = select_reset_layers(l, r);
            prop_assert_eq!(sel.len(), round_half_up(r * l as f64).clamp(1, l));
            prop_assert_eq!(*sel.last().unwrap(), l - 1);
            prop_assert!(sel.windows(2).all(|w| w[1] == w[0] + 1));
        }
    }
}
