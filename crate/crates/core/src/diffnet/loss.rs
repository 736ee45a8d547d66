use super::Matrix;
use crate::{Error, Result};

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

fn check_finite(m: &Matrix) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteInput("logits".into()))
    }
}

/// Row-wise softmax, stabilized by subtracting the row maximum.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    check_finite(logits)?;
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|z| *z = (*z - max).exp());
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|z| *z /= sum);
    }
    Ok(out)
}

pub fn log_softmax_rows(logits: &Matrix) -> Result<Matrix> {
    check_finite(logits)?;
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|z| *z -= lse);
    }
    Ok(out)
}

/// Shannon entropy of one probability row, with `0 ln 0 = 0`.
pub fn row_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Mean per-row entropy of a row-stochastic matrix.
pub fn entropy_loss(probs: &Matrix) -> f64 {
    if probs.rows() == 0 {
        return 0.0;
    }
    probs.row_iter().map(row_entropy).sum::<f64>() / probs.rows() as f64
}

/// Mean softmax entropy and its gradient with respect to the logits.
///
/// For one row, `dH/dz_j = -p_j (ln p_j + H)`.
pub fn entropy_loss_and_grad(logits: &Matrix) -> Result<(f64, Matrix)> {
    let log_probs = log_softmax_rows(logits)?;
    let n = logits.rows() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.rows() * logits.cols());
    for lp in log_probs.row_iter() {
        let h: f64 = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
        total += h;
        grad.extend(lp.iter().map(|l| -l.exp() * (l + h) / n));
    }
    Ok((total / n, Matrix::from_raw(logits.rows(), logits.cols(), grad)))
}

/// Mean cross-entropy against integer labels and its logit gradient.
pub fn cross_entropy_and_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Index {
            index: bad,
            len: logits.cols(),
        });
    }
    let log_probs = log_softmax_rows(logits)?;
    let n = logits.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.rows() * logits.cols());
    for (lp, &y) in log_probs.row_iter().zip(labels) {
        loss -= lp[y];
        grad.extend(
            lp.iter()
                .enumerate()
                .map(|(c, l)| (l.exp() - f64::from(u8::from(c == y))) / n),
        );
    }
    Ok((loss / n, Matrix::from_raw(logits.rows(), logits.cols(), grad)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        let p = softmax_rows(&m(&[vec![0.0, 0.0], vec![0.0, 3f64.ln()]])).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((p.get(1, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(1, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax_rows(&m(&[vec![0.3, -1.2, 2.0]])).unwrap();
        let b = softmax_rows(&m(&[vec![1000.3, 998.8, 1002.0]])).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_examples() {
        let uniform = m(&[vec![0.25; 4]]);
        assert!((entropy_loss(&uniform) - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy_loss(&m(&[vec![0.0, 1.0, 0.0]])), 0.0);

        let rows = [vec![0.2, 0.3, 0.5], vec![0.9, 0.05, 0.05]];
        let scalar = |r: &[f64]| {
            let mut h = 0.0;
            for p in r {
                h -= p * p.ln();
            }
            h
        };
        let want = (scalar(&rows[0]) + scalar(&rows[1])) / 2.0;
        assert!((entropy_loss(&m(&rows)) - want).abs() < 1e-15);
    }

    #[test]
    fn entropy_from_logits_agrees_with_probs() {
        let z = m(&[vec![0.5, -0.2, 1.5], vec![3.0, 0.0, -3.0]]);
        let (h, _) = entropy_loss_and_grad(&z).unwrap();
        assert!((h - entropy_loss(&softmax_rows(&z).unwrap())).abs() < 1e-14);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let z = m(&[vec![0.0, 0.0]]);
        assert!(cross_entropy_and_grad(&z, &[2]).is_err());
        assert!(cross_entropy_and_grad(&z, &[0, 1]).is_err());
        let (l, _) = cross_entropy_and_grad(&z, &[1]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }
}
