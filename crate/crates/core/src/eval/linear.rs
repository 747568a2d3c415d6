//! One-vs-rest linear SVM trained by Pegasos-style stochastic subgradient
//! descent, plus stratified cross-validation for the regularization constant.
//!
//! Each binary problem minimizes `lambda/2 |w|^2 + mean(hinge)` with
//! `lambda = 1 / (C n)`; the bias is an extra constant feature. Step size is
//! `1 / (lambda t)` and every epoch visits the examples in a seeded shuffle.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::macro_f1;
use crate::linalg::dot;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

pub const DEFAULT_C_GRID: [f64; 5] = [0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub epochs: usize,
    pub folds: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig { epochs: 100, folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    /// Class indices with a trained scorer, ascending.
    classes: Vec<usize>,
    weights: Vec<Vec<T>>,
    biases: Vec<T>,
    c: f64,
}

impl<T: Scalar> LinearModel<T> {
    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn scores(&self, x: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| dot(w, x) + b)
            .collect()
    }

    /// Highest-scoring class; ties go to the smallest class index.
    pub fn predict(&self, x: &[T]) -> usize {
        let s = self.scores(x);
        let mut best = 0;
        for i in 1..s.len() {
            if s[i] > s[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    pub fn predict_all(&self, xs: &[&[T]]) -> Vec<usize> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

fn check_inputs<T: Scalar>(xs: &[&[T]], ys: &[usize]) -> Result<usize> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let dim = xs.first().map_or(0, |x| x.len());
    for x in xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("NaN feature in training data"));
        }
    }
    Ok(dim)
}

/// Trains one-vs-rest hinge-loss classifiers, one per class present in `ys`.
pub fn train_linear<T: Scalar>(
    xs: &[&[T]],
    ys: &[usize],
    c: f64,
    seed: u64,
    cfg: &LinearConfig,
) -> Result<LinearModel<T>> {
    let dim = check_inputs(xs, ys)?;
    let mut classes: Vec<usize> = ys.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("linear classifier needs at least two classes"));
    }
    if !(c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let n = xs.len();
    let orders: Vec<Vec<usize>> = (0..cfg.epochs)
        .map(|e| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng_from_seed(derive_seed(seed, "epoch", &e.to_string())));
            idx
        })
        .collect();
    let lambda = 1.0 / (c * n as f64);
    let fitted: Vec<(Vec<T>, T)> = classes
        .par_iter()
        .map(|&class| pegasos(xs, ys, class, dim, lambda, &orders))
        .collect();
    let (weights, biases) = fitted.into_iter().unzip();
    Ok(LinearModel {
        classes,
        weights,
        biases,
        c,
    })
}

fn pegasos<T: Scalar>(
    xs: &[&[T]],
    ys: &[usize],
    class: usize,
    dim: usize,
    lambda: f64,
    orders: &[Vec<usize>],
) -> (Vec<T>, T) {
    // w = scale * (v, vb); the bias vb pairs with a constant feature of 1
    let mut v = vec![0f64; dim];
    let mut vb = 0f64;
    let mut scale = 1f64;
    let mut vnorm2 = 0f64;
    let radius2 = 1.0 / lambda;
    let mut t = 0f64;
    for order in orders {
        for &i in order {
            t += 1.0;
            let eta = 1.0 / (lambda * t);
            let x = xs[i];
            let y = if ys[i] == class { 1.0 } else { -1.0 };
            let vx: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b.to_f64_lossy()).sum::<f64>() + vb;
            let margin = y * scale * vx;
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|a| *a = 0.0);
                vb = 0.0;
                vnorm2 = 0.0;
                scale = 1.0;
            } else {
                scale *= shrink;
            }
            if margin < 1.0 {
                let a = eta * y / scale;
                let mut xx = 1.0;
                let vdot = if shrink <= 0.0 { 0.0 } else { vx };
                for (vi, xi) in v.iter_mut().zip(x.iter()) {
                    let xi = xi.to_f64_lossy();
                    *vi += a * xi;
                    xx += xi * xi;
                }
                vb += a;
                vnorm2 += 2.0 * a * vdot + a * a * xx;
            }
            let wnorm2 = scale * scale * vnorm2.max(0.0);
            if wnorm2 > radius2 {
                scale *= (radius2 / wnorm2).sqrt();
            }
            if scale < 1e-100 {
                v.iter_mut().for_each(|a| *a *= scale);
                vb *= scale;
                vnorm2 *= scale * scale;
                scale = 1.0;
            }
        }
    }
    let w = v.iter().map(|&a| T::lit(a * scale)).collect();
    (w, T::lit(vb * scale))
}

/// Stratified fold id per example: each class's examples are shuffled and dealt
/// round-robin across folds.
pub fn stratified_folds(ys: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &y) in ys.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut assignment = vec![0; ys.len()];
    let mut next = 0;
    for (class, mut idx) in by_class {
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, "fold", &class.to_string())));
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_c: f64,
    /// `(C, mean macro-F1 over folds)` per grid value, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid value with the best mean cross-validated macro-F1; ties go
/// to the smallest C.
pub fn tune_c<T: Scalar>(xs: &[&[T]], ys: &[usize], grid: &[f64], seed: u64, cfg: &LinearConfig) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("C grid is empty".into()));
    }
    check_inputs(xs, ys)?;
    if grid.len() == 1 {
        return Ok(TuneResult {
            best_c: grid[0],
            scores: vec![(grid[0], f64::NAN)],
        });
    }
    let folds = cfg.folds.min(xs.len()).max(2);
    if xs.len() < 2 {
        return Err(Error::invalid("cross-validation needs at least two examples"));
    }
    let fold_of = stratified_folds(ys, folds, seed);
    let jobs: Vec<(usize, usize)> = (0..grid.len()).flat_map(|g| (0..folds).map(move |f| (g, f))).collect();
    let results: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(g, f)| -> Result<Option<f64>> {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..xs.len() {
                if fold_of[i] == f {
                    vx.push(xs[i]);
                    vy.push(ys[i]);
                } else {
                    tx.push(xs[i]);
                    ty.push(ys[i]);
                }
            }
            let distinct = ty.iter().collect::<std::collections::BTreeSet<_>>().len();
            if vx.is_empty() || distinct < 2 {
                return Ok(None);
            }
            let model = train_linear(&tx, &ty, grid[g], derive_seed(seed, "cv", &f.to_string()), cfg)?;
            Ok(Some(macro_f1(&vy, &model.predict_all(&vx))))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::with_capacity(grid.len());
    for (g, &c) in grid.iter().enumerate() {
        let vals: Vec<f64> = results[g * folds..(g + 1) * folds].iter().flatten().copied().collect();
        let mean = if vals.is_empty() {
            f64::NEG_INFINITY
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        scores.push((c, mean));
    }
    let mut best = scores[0];
    for &(c, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && c < best.0) {
            best = (c, s);
        }
    }
    Ok(TuneResult { best_c: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    fn blobs(n_per: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..2 * n_per {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            let mut x: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng) * 0.5).collect();
            x[0] += sign * sep;
            xs.push(x);
            ys.push(c);
        }
        (xs, ys)
    }

    fn refs(xs: &[Vec<f64>]) -> Vec<&[f64]> {
        xs.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn one_dimensional_separable() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }]).collect();
        let ys: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let m = train_linear(&refs(&xs), &ys, 1.0, 0, &LinearConfig::default()).unwrap();
        assert_eq!(m.predict_all(&refs(&xs)), ys);
    }

    #[test]
    fn single_class_and_nan_rejected() {
        let xs = vec![vec![1.0], vec![2.0]];
        assert!(train_linear(&refs(&xs), &[0, 0], 1.0, 0, &LinearConfig::default()).is_err());
        let bad = vec![vec![f64::NAN], vec![2.0]];
        assert!(train_linear(&refs(&bad), &[0, 1], 1.0, 0, &LinearConfig::default()).is_err());
    }

    #[test]
    fn blobs_at_every_c() {
        let (train, ty) = blobs(60, 10, 3.0, 1);
        let (test, vy) = blobs(100, 10, 3.0, 2);
        for c in DEFAULT_C_GRID {
            let m = train_linear(&refs(&train), &ty, c, 3, &LinearConfig::default()).unwrap();
            let acc = crate::eval::metrics::accuracy(&vy, &m.predict_all(&refs(&test)));
            assert!(acc >= 0.99, "C = {c}: accuracy {acc}");
        }
    }

    #[test]
    fn prediction_ties_go_to_smallest_class() {
        let m = LinearModel::<f64> {
            classes: vec![2, 5],
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![0.0, 0.0],
            c: 1.0,
        };
        assert_eq!(m.predict(&[3.0]), 2);
    }

    #[test]
    fn tuning() {
        let (xs, ys) = blobs(20, 4, 4.0, 5);
        let r = tune_c(&refs(&xs), &ys, &[10.0], 0, &LinearConfig::default()).unwrap();
        assert_eq!(r.best_c, 10.0);
        let r = tune_c(&refs(&xs), &ys, &DEFAULT_C_GRID, 0, &LinearConfig::default()).unwrap();
        assert!(r.scores.iter().all(|&(_, s)| s == 1.0), "{:?}", r.scores);
        assert_eq!(r.best_c, 0.01);
        // same scores in reverse grid order still pick the smallest C
        let mut rev = DEFAULT_C_GRID.to_vec();
        rev.reverse();
        assert_eq!(
            tune_c(&refs(&xs), &ys, &rev, 0, &LinearConfig::default())
                .unwrap()
                .best_c,
            0.01
        );
        assert!(tune_c(&refs(&xs), &ys, &[], 0, &LinearConfig::default()).is_err());
    }

    #[test]
    fn folds_are_stratified() {
        let ys: Vec<usize> = (0..53).map(|i| if i < 40 { 0 } else { 1 + i % 2 }).collect();
        let folds = stratified_folds(&ys, 5, 9);
        for class in 0..3 {
            let mut per_fold = [0usize; 5];
            for (i, &y) in ys.iter().enumerate() {
                if y == class {
                    per_fold[folds[i]] += 1;
                }
            }
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {class}: {per_fold:?}");
        }
        assert_eq!(folds, stratified_folds(&ys, 5, 9));
    }
}
