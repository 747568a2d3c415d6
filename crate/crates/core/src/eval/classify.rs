//! Supervised classification with a cross-validated linear model, on the full
//! training split or on nested stratified fractions of it.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::docvec::DocumentVectorSet;
use crate::error::{Error, Result};
use crate::eval::linear::{train_linear, tune_c, LinearConfig, DEFAULT_C_GRID};
use crate::eval::metrics::{accuracy, macro_f1};
use crate::eval::{Curve, EvalRun, LabeledData, Protocol};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

pub const LIMITED_FRACTIONS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub repeats: usize,
    pub c_grid: Vec<f64>,
    pub linear: LinearConfig,
    pub seed: u64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            repeats: 5,
            c_grid: DEFAULT_C_GRID.to_vec(),
            linear: LinearConfig::default(),
            seed: 0,
        }
    }
}

fn take_count(fraction: f64, n: usize) -> usize {
    // tolerance keeps e.g. 0.3 * 10 from rounding up to 4
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Stratified subsample chains: for each fraction, the sorted indices of the
/// first `ceil(fraction * n_c)` entries of a seeded per-class permutation.
/// Larger fractions therefore contain every smaller one.
pub fn nested_subsamples(labels: &[usize], fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    for (&class, idx) in by_class.iter_mut() {
        idx.shuffle(&mut rng_from_seed(derive_seed(seed, "subsample", &class.to_string())));
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("training fraction must lie in (0, 1], got {f}")));
            }
            if f * (labels.len() as f64) < by_class.len() as f64 {
                return Err(Error::invalid(format!(
                    "fraction {f} of {} training documents cannot cover {} classes",
                    labels.len(),
                    by_class.len()
                )));
            }
            let mut chosen: Vec<usize> = by_class
                .values()
                .flat_map(|idx| idx[..take_count(f, idx.len())].iter().copied())
                .collect();
            chosen.sort_unstable();
            Ok(chosen)
        })
        .collect()
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, "classify", &r.to_string())
}

fn setting_name(fraction: f64) -> String {
    if fraction >= 1.0 {
        "full".to_string()
    } else {
        format!("{}%", (fraction * 100.0).round())
    }
}

fn run_fraction<T: Scalar>(data: &LabeledData<'_, T>, fraction: f64, cfg: &ClassifyConfig) -> Result<EvalRun> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let outcomes: Vec<(f64, f64, f64)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = repeat_seed(cfg.seed, r);
            let chain = nested_subsamples(&data.train_y, &[fraction], seed)?.remove(0);
            let xs: Vec<&[T]> = chain.iter().map(|&i| data.train_x[i]).collect();
            let ys: Vec<usize> = chain.iter().map(|&i| data.train_y[i]).collect();
            let tuned = tune_c(&xs, &ys, &cfg.c_grid, derive_seed(seed, "tune", ""), &cfg.linear)?;
            let model = train_linear(&xs, &ys, tuned.best_c, derive_seed(seed, "train", ""), &cfg.linear)?;
            let pred = model.predict_all(&data.test_x);
            Ok((
                accuracy(&data.test_y, &pred),
                macro_f1(&data.test_y, &pred),
                tuned.best_c,
            ))
        })
        .collect::<Result<_>>()?;
    let mut per_run = BTreeMap::new();
    per_run.insert("accuracy".to_string(), outcomes.iter().map(|o| o.0).collect());
    per_run.insert("macro_f1".to_string(), outcomes.iter().map(|o| o.1).collect());
    let protocol = if fraction >= 1.0 {
        Protocol::Full
    } else {
        Protocol::Limited
    };
    let config = serde_json::json!({
        "fraction": fraction,
        "repeats": cfg.repeats,
        "c_grid": cfg.c_grid,
        "epochs": cfg.linear.epochs,
        "folds": cfg.linear.folds,
        "seed": cfg.seed,
    });
    let seeds = (0..cfg.repeats).map(|r| repeat_seed(cfg.seed, r)).collect();
    let mut run = EvalRun::new(protocol, config, seeds, per_run)?;
    run.setting = setting_name(fraction);
    run.details = serde_json::json!({
        "chosen_c": outcomes.iter().map(|o| o.2).collect::<Vec<_>>(),
        "train_size": take_total(&data.train_y, fraction),
        "test_size": data.test_y.len(),
    });
    Ok(run)
}

fn take_total(labels: &[usize], fraction: f64) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &y in labels {
        *counts.entry(y).or_default() += 1;
    }
    counts.values().map(|&n| take_count(fraction, n)).sum()
}

/// Trains on `fraction` of the labeled training split and scores the test
/// split, once per repeat.
pub fn evaluate_classification<T: Scalar>(
    dv: &DocumentVectorSet<T>,
    corpus: &Corpus,
    fraction: f64,
    cfg: &ClassifyConfig,
) -> Result<EvalRun> {
    let data = LabeledData::new(dv, corpus)?;
    run_fraction(&data, fraction, cfg)
}

/// One run per fraction, sharing repeat seeds so the training sets nest.
pub fn limited_data_curve<T: Scalar>(
    dv: &DocumentVectorSet<T>,
    corpus: &Corpus,
    fractions: &[f64],
    cfg: &ClassifyConfig,
) -> Result<(Vec<EvalRun>, Curve)> {
    let data = LabeledData::new(dv, corpus)?;
    let runs = fractions
        .iter()
        .map(|&f| run_fraction(&data, f, cfg))
        .collect::<Result<Vec<_>>>()?;
    let curve = Curve::from_runs("fraction", fractions, &runs);
    Ok((runs, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn separable(n_train: usize, n_test: usize) -> (DocumentVectorSet<f64>, Corpus) {
        let mut docs = Vec::new();
        let mut vecs = Vec::new();
        for (split, n) in [(Split::Train, n_train), (Split::Test, n_test)] {
            for i in 0..n {
                let c = i % 2;
                docs.push(Document {
                    id: 0,
                    source_id: None,
                    tokens: vec!["x".into()],
                    label: Some(if c == 0 { "a" } else { "b" }.into()),
                    split,
                });
                let jitter = (i as f64 * 0.37).sin() * 0.1;
                vecs.push(if c == 0 { vec![1.0, jitter] } else { vec![jitter, 1.0] });
            }
        }
        (DocumentVectorSet::new(1, 2, vecs).unwrap(), Corpus::new(docs))
    }

    #[test]
    fn take_counts() {
        assert_eq!(take_count(0.3, 10), 3);
        assert_eq!(take_count(0.1, 5), 1);
        assert_eq!(take_count(1.0, 7), 7);
    }

    #[test]
    fn chains_nest_and_stratify() {
        let labels: Vec<usize> = (0..97).map(|i| i % 3).collect();
        let fr = [0.1, 0.2, 0.3, 0.4, 0.5, 1.0];
        let chains = nested_subsamples(&labels, &fr, 11).unwrap();
        for w in chains.windows(2) {
            assert!(w[0].iter().all(|i| w[1].binary_search(i).is_ok()));
        }
        assert_eq!(chains[5].len(), 97);
        for (f, chain) in fr.iter().zip(&chains) {
            for c in 0..3 {
                let n_c = labels.iter().filter(|&&y| y == c).count();
                let got = chain.iter().filter(|&&i| labels[i] == c).count();
                assert_eq!(got, take_count(*f, n_c));
            }
        }
        assert!(nested_subsamples(&labels, &[0.01], 1).is_err());
        assert!(nested_subsamples(&labels, &[0.0], 1).is_err());
    }

    #[test]
    fn separable_full_and_limited() {
        let (dv, corpus) = separable(60, 40);
        let cfg = ClassifyConfig {
            repeats: 2,
            ..Default::default()
        };
        let full = evaluate_classification(&dv, &corpus, 1.0, &cfg).unwrap();
        assert_eq!(full.protocol, Protocol::Full);
        assert_eq!(full.mean["accuracy"], 1.0);
        let again = evaluate_classification(&dv, &corpus, 1.0, &cfg).unwrap();
        assert_eq!(full, again);
        let (runs, curve) = limited_data_curve(&dv, &corpus, &[0.1, 0.2, 0.3, 0.4, 0.5, 1.0], &cfg).unwrap();
        assert_eq!(runs.len(), 6);
        assert_eq!(curve.to_csv().lines().count(), 7);
        assert_eq!(runs[0].setting, "10%");
        assert_eq!(runs[0].protocol, Protocol::Limited);
    }
}
