//! Scoring functions shared by the evaluation protocols.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

/// F1 of one class treated as positive; 0 when it is never predicted nor present.
pub fn f1_for_class(truth: &[usize], pred: &[usize], class: usize) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Unweighted mean of per-class F1 over every class seen in truth or prediction.
pub fn macro_f1(truth: &[usize], pred: &[usize]) -> f64 {
    let classes: BTreeSet<usize> = truth.iter().chain(pred).copied().collect();
    if classes.is_empty() {
        return 0.0;
    }
    classes.iter().map(|&c| f1_for_class(truth, pred, c)).sum::<f64>() / classes.len() as f64
}

/// Sample Pearson correlation. Errors when either side has zero variance.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("Pearson correlation needs at least two pairs"));
    }
    let n = T::from_usize_lossy(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == T::zero() || sbb == T::zero() {
        return Err(Error::Numeric(
            "Pearson correlation undefined for zero-variance scores".into(),
        ));
    }
    let r = sab / (saa * sbb).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_hand_cases() {
        let gold = [1.0, 2.0, 3.0, 4.5];
        assert_eq!(pearson(&gold, &gold).unwrap(), 1.0);
        let neg: Vec<f64> = gold.iter().map(|g| -g).collect();
        assert_eq!(pearson(&neg, &gold).unwrap(), -1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert!(pearson(&[1.0, 1.0, 1.0], &gold[..3]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_affine_invariance() {
        let a = [0.3, -1.2, 2.2, 0.9, 4.1];
        let b = [1.0, 0.0, 3.0, 2.5, 4.0];
        let r = pearson(&a, &b).unwrap();
        let a2: Vec<f64> = a.iter().map(|x| 3.5 * x - 7.0).collect();
        let b2: Vec<f64> = b.iter().map(|x| 0.2 * x + 11.0).collect();
        assert!((pearson(&a2, &b2).unwrap() - r).abs() < 1e-12);
    }

    #[test]
    fn f1_and_accuracy() {
        let t = [0, 0, 1, 1, 2];
        let p = [0, 1, 1, 1, 0];
        assert_eq!(accuracy(&t, &p), 0.6);
        // class 0: tp1 fp1 fn1 -> 0.5; class 1: tp2 fp1 fn0 -> 0.8; class 2: 0
        assert!((macro_f1(&t, &p) - (0.5 + 0.8 + 0.0) / 3.0).abs() < 1e-12);
        assert_eq!(macro_f1(&t, &t), 1.0);
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }
}
