//! Evaluation quantities. Everything here except [`batch_accuracy`] is a
//! pure function of a [`RunRecord`], so metrics can never feed back into
//! adaptation.

use crate::diffnet::Matrix;
use crate::engine::{RunRecord, StepRow};
use crate::{Error, Result};

/// Ground-truth labels of a batch. The contents are private: only the
/// functions in this module read them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<usize>);

impl Labels {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-class label counts.
pub fn label_histogram(labels: &Labels, class_count: usize) -> Vec<usize> {
    let mut counts = vec![0; class_count];
    for &y in &labels.0 {
        counts[y] += 1;
    }
    counts
}

/// Top-1 accuracy with lowest-index argmax ties.
pub fn batch_accuracy(logits: &Matrix, labels: &Labels) -> Result<f64> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let correct = logits
        .argmax_rows()
        .into_iter()
        .zip(&labels.0)
        .filter(|(p, y)| p == *y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Set of predicted classes, stored as a bitset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassSet {
    words: Vec<u64>,
}

impl ClassSet {
    pub fn from_predictions(predictions: &[usize]) -> Self {
        let mut set = Self::default();
        for &p in predictions {
            set.insert(p);
        }
        set
    }

    pub fn insert(&mut self, class: usize) {
        let (w, b) = (class / 64, class % 64);
        if self.words.len() <= w {
            self.words.resize(w + 1, 0);
        }
        self.words[w] |= 1 << b;
    }

    pub fn contains(&self, class: usize) -> bool {
        self.words
            .get(class / 64)
            .is_some_and(|w| w & (1 << (class % 64)) != 0)
    }

    pub fn union_with(&mut self, other: &ClassSet) {
        if self.words.len() < other.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Lowercase hex, most significant word first, no leading zero words.
    pub fn to_hex(&self) -> String {
        let mut words: Vec<u64> = self.words.clone();
        while words.last() == Some(&0) {
            words.pop();
        }
        if words.is_empty() {
            return "0".into();
        }
        let mut out = format!("{:x}", words[words.len() - 1]);
        for w in words.iter().rev().skip(1) {
            out.push_str(&format!("{w:016x}"));
        }
        out
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Config(format!("invalid class set `{s}`")));
        }
        let mut words = Vec::new();
        let mut end = s.len();
        while end > 0 {
            let start = end.saturating_sub(16);
            words.push(u64::from_str_radix(&s[start..end], 16).map_err(|e| Error::Config(e.to_string()))?);
            end = start;
        }
        while words.last() == Some(&0) {
            words.pop();
        }
        Ok(Self { words })
    }
}

/// Fraction of classes predicted at least once.
pub fn class_coverage<I: IntoIterator<Item = usize>>(predictions: I, class_count: usize) -> Result<f64> {
    let mut set = ClassSet::default();
    let mut seen = false;
    for p in predictions {
        set.insert(p);
        seen = true;
    }
    if !seen {
        return Err(Error::Undefined("coverage of an empty window".into()));
    }
    Ok(set.count() as f64 / class_count as f64)
}

/// Accuracy and class coverage over a run of rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    pub window_len: usize,
    pub accuracy: f64,
    pub coverage: f64,
}

pub fn window_stats(rows: &[StepRow], class_count: usize) -> Result<WindowStats> {
    if rows.is_empty() {
        return Err(Error::Undefined("empty window".into()));
    }
    let mut set = ClassSet::default();
    for r in rows {
        set.union_with(&r.predicted);
    }
    Ok(WindowStats {
        window_len: rows.len(),
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / rows.len() as f64,
        coverage: set.count() as f64 / class_count as f64,
    })
}

/// Stats over the last `window` rows (or all rows if fewer).
pub fn final_window(record: &RunRecord, window: usize) -> Result<WindowStats> {
    let rows = &record.rows;
    window_stats(&rows[rows.len().saturating_sub(window.max(1))..], record.class_count)
}

/// A method has collapsed when it does worse than the frozen source model.
pub fn collapse_flag(method_accuracy: f64, source_accuracy: f64) -> bool {
    method_accuracy < source_accuracy
}

pub const RESET_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResetEventStats {
    /// Step of the reset (the reset happens after this step's prediction).
    pub step: usize,
    pub pre_mean: f64,
    pub post_mean: f64,
    /// `post_mean - pre_mean`.
    pub drop: f64,
    /// Batches until accuracy first reaches the pre-window maximum, for
    /// negative drops. Capped at the distance to the next reset or the end.
    pub delay: Option<usize>,
    pub delay_capped: bool,
}

/// Accuracy drop and recovery delay around every reset that has a full
/// 10-batch window on both sides.
pub fn reset_drop_and_delay(record: &RunRecord) -> Vec<ResetEventStats> {
    let rows = &record.rows;
    let resets: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.reset)
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for (k, &i) in resets.iter().enumerate() {
        if i + 1 < RESET_WINDOW || i + RESET_WINDOW >= rows.len() {
            continue;
        }
        let pre = &rows[i + 1 - RESET_WINDOW..=i];
        let post = &rows[i + 1..=i + RESET_WINDOW];
        let mean = |w: &[StepRow]| w.iter().map(|r| r.accuracy).sum::<f64>() / w.len() as f64;
        let (pre_mean, post_mean) = (mean(pre), mean(post));
        let drop = post_mean - pre_mean;
        let (delay, delay_capped) = if drop < 0.0 {
            let target = pre.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
            let cap = resets.get(k + 1).copied().unwrap_or(rows.len() - 1) - i;
            match (1..=cap).find(|&d| rows[i + d].accuracy >= target) {
                Some(d) => (Some(d), false),
                None => (Some(cap), true),
            }
        } else {
            (None, false)
        };
        out.push(ResetEventStats {
            step: rows[i].step,
            pre_mean,
            post_mean,
            drop,
            delay,
            delay_capped,
        });
    }
    out
}

/// Mean over domains of `visit[v] - max(visit[..v])` for every revisit `v`.
///
/// `visits[d]` lists domain `d`'s per-visit accuracies in visit order.
/// Entry `v - 1` of the result covers visit `v` (0-based), averaged over the
/// domains that reached it.
pub fn knowledge_recovery_by_visit(visits: &[Vec<f64>]) -> Result<Vec<f64>> {
    let max_visits = visits.iter().map(Vec::len).max().unwrap_or(0);
    if max_visits < 2 {
        return Err(Error::Undefined(
            "knowledge recovery needs at least two visits to a domain".into(),
        ));
    }
    Ok((1..max_visits)
        .map(|v| {
            let gaps: Vec<f64> = visits
                .iter()
                .filter(|d| d.len() > v)
                .map(|d| d[v] - d[..v].iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            gaps.iter().sum::<f64>() / gaps.len() as f64
        })
        .collect())
}

/// Per-domain visit accuracies: a visit is a maximal run of consecutive rows
/// with the same domain label, scored by its mean batch accuracy.
pub fn domain_visit_accuracies(record: &RunRecord) -> Vec<(String, Vec<f64>)> {
    let mut domains: Vec<(String, Vec<f64>)> = Vec::new();
    let mut start = 0;
    let rows = &record.rows;
    while start < rows.len() {
        let label = &rows[start].domain;
        let end = rows[start..]
            .iter()
            .position(|r| &r.domain != label)
            .map_or(rows.len(), |p| start + p);
        let acc = rows[start..end].iter().map(|r| r.accuracy).sum::<f64>() / (end - start) as f64;
        match domains.iter_mut().find(|(d, _)| d == label) {
            Some((_, v)) => v.push(acc),
            None => domains.push((label.clone(), vec![acc])),
        }
        start = end;
    }
    domains
}

/// Recovery gap on the latest revisit.
pub fn knowledge_recovery(record: &RunRecord) -> Result<f64> {
    let visits: Vec<Vec<f64>> = domain_visit_accuracies(record)
        .into_iter()
        .map(|(_, v)| v)
        .collect();
    Ok(*knowledge_recovery_by_visit(&visits)?
        .last()
        .expect("at least one revisit"))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Undefined(format!(
            "pearson needs two equal-length series of at least 2 points, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("pearson of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Means of consecutive non-overlapping windows; a short tail is dropped.
pub fn window_means(values: &[f64], window: usize) -> Vec<f64> {
    values
        .chunks_exact(window.max(1))
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RunOutcome;
    use proptest::prelude::*;

    fn row(step: usize, accuracy: f64, reset: bool, domain: &str) -> StepRow {
        StepRow {
            step,
            domain: domain.into(),
            severity: "5".into(),
            accuracy,
            c_t: -2.0,
            bar_c: -2.0,
            phi_t: 0.0,
            lambda_f: 0.0,
            mu_c: 0.995,
            reset,
            r_t: if reset { 1.0 } else { 0.0 },
            layers_reset: if reset { 3 } else { 0 },
            predicted: ClassSet::from_predictions(&[0]),
        }
    }

    fn record(accs: &[f64], resets: &[usize]) -> RunRecord {
        RunRecord {
            strategy: "test".into(),
            class_count: 10,
            layer_count: 3,
            initial_bar_c: -(5f64.ln()),
            rows: accs
                .iter()
                .enumerate()
                .map(|(i, a)| row(i + 1, *a, resets.contains(&(i + 1)), "d"))
                .collect(),
            outcome: RunOutcome::Completed,
        }
    }

    #[test]
    fn accuracy_examples() {
        let z = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(batch_accuracy(&z, &Labels::new(vec![0, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(batch_accuracy(&z, &Labels::new(vec![1, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(batch_accuracy(&z, &Labels::new(vec![0, 1, 0, 1])).unwrap(), 0.75);
        assert!(batch_accuracy(&z, &Labels::new(vec![0])).is_err());
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(class_coverage(vec![4; 20], 10).unwrap(), 0.1);
        assert_eq!(class_coverage(0..10, 10).unwrap(), 1.0);
        assert_eq!(class_coverage([1, 5, 5, 9, 1], 10).unwrap(), 0.3);
        assert!(class_coverage(Vec::new(), 10).is_err());
    }

    #[test]
    fn collapse_examples() {
        assert!(collapse_flag(0.30, 0.33));
        assert!(!collapse_flag(0.33, 0.33));
        assert!(!collapse_flag(0.40, 0.33));
    }

    #[test]
    fn constant_accuracy_has_no_drop() {
        let rec = record(&[0.5; 60], &[20, 40]);
        let stats = reset_drop_and_delay(&rec);
        assert_eq!(stats.len(), 2);
        assert!(stats.iter().all(|s| s.drop == 0.0 && s.delay.is_none()));
        assert!(reset_drop_and_delay(&record(&[0.5; 30], &[])).is_empty());
    }

    #[test]
    fn drop_and_delay_fixture() {
        let mut accs = vec![0.5; 20];
        accs.extend([0.3; 6]);
        accs.extend([0.5; 14]);
        let stats = reset_drop_and_delay(&record(&accs, &[20]));
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].step, 20);
        assert_eq!(stats[0].delay, Some(7));
        assert!(!stats[0].delay_capped);

        let mut accs = vec![0.5; 20];
        accs.extend([0.3; 20]);
        let stats = reset_drop_and_delay(&record(&accs, &[20, 35]));
        assert!((stats[0].drop + 0.2).abs() < 1e-12);
        assert_eq!(stats[0].delay, Some(15));
        assert!(stats[0].delay_capped);
        assert_eq!(stats.len(), 1, "second reset is too close to the end");
    }

    #[test]
    fn knowledge_recovery_examples() {
        let same = knowledge_recovery_by_visit(&[vec![0.4, 0.4], vec![0.4, 0.4]]).unwrap();
        assert_eq!(same, vec![0.0]);
        let up = knowledge_recovery_by_visit(&[vec![0.4, 0.42], vec![0.4, 0.42]]).unwrap();
        assert!((up[0] - 0.02).abs() < 1e-12);
        let mixed = knowledge_recovery_by_visit(&[vec![0.5, 0.51], vec![0.5, 0.47]]).unwrap();
        assert!((mixed[0] + 0.01).abs() < 1e-12);
        assert!(knowledge_recovery_by_visit(&[vec![0.5], vec![0.4]]).is_err());
    }

    #[test]
    fn knowledge_recovery_from_record() {
        let mut rec = record(&[0.4, 0.4, 0.6, 0.6, 0.5, 0.5, 0.7, 0.7], &[]);
        for (i, r) in rec.rows.iter_mut().enumerate() {
            r.domain = if (i / 2) % 2 == 0 { "a" } else { "b" }.into();
        }
        let visits = domain_visit_accuracies(&rec);
        assert_eq!(visits[0], ("a".to_string(), vec![0.4, 0.5]));
        assert_eq!(visits[1], ("b".to_string(), vec![0.6, 0.7]));
        assert!((knowledge_recovery(&rec).unwrap() - 0.1).abs() < 1e-12);
        assert!(knowledge_recovery(&record(&[0.5; 5], &[])).is_err());
    }

    #[test]
    fn pearson_examples() {
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &lin).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);

        // Second route: E[xy] - E[x]E[y] over population standard deviations.
        let ys = [0.3, -1.0, 2.5, 0.7, 1.9];
        let n = 5.0;
        let e = |v: &[f64]| v.iter().sum::<f64>() / n;
        let exy: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
        let xx: Vec<f64> = xs.iter().map(|a| a * a).collect();
        let yy: Vec<f64> = ys.iter().map(|a| a * a).collect();
        let cov = e(&exy) - e(&xs) * e(&ys);
        let sx = (e(&xx) - e(&xs).powi(2)).sqrt();
        let sy = (e(&yy) - e(&ys).powi(2)).sqrt();
        assert!((pearson(&xs, &ys).unwrap() - cov / (sx * sy)).abs() <= 1e-12);

        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn class_set_hex() {
        let s = ClassSet::from_predictions(&[0, 3, 64, 70]);
        assert_eq!(s.count(), 4);
        assert!(s.contains(64) && !s.contains(65));
        assert_eq!(ClassSet::from_hex(&s.to_hex()).unwrap(), s);
        assert_eq!(ClassSet::default().to_hex(), "0");
        assert!(ClassSet::from_hex("xyz").is_err());
    }

    proptest! {
        #[test]
        fn coverage_grows_with_window(preds in proptest::collection::vec(0usize..10, 1..60)) {
            let mut last = 0.0;
            for end in 1..=preds.len() {
                let c = class_coverage(preds[..end].iter().copied(), 10).unwrap();
                prop_assert!(c >= last && c > 0.0 && c <= 1.0);
                last = c;
            }
        }

        #[test]
        fn class_set_hex_round_trips(classes in proptest::collection::vec(0usize..200, 0..30)) {
            let s = ClassSet::from_predictions(&classes);
            prop_assert_eq!(ClassSet::from_hex(&s.to_hex()).unwrap(), s);
        }
    }
}
