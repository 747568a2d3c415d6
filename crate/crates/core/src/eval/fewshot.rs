//! K-shot N-way prototypical classification: each class is represented by the
//! mean of K labeled vectors and test points take the nearest prototype.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::docvec::DocumentVectorSet;
use crate::error::{Error, Result};
use crate::eval::metrics::{accuracy, macro_f1};
use crate::eval::{Curve, EvalRun, LabeledData, Protocol};
use crate::linalg::{cosine, squared_distance};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

pub const SHOT_COUNTS: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    #[default]
    Cosine,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub repeats: usize,
    pub distance: Distance,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            repeats: 5,
            distance: Distance::Cosine,
            seed: 0,
        }
    }
}

/// Per-class mean vectors, ordered by class index.
pub fn prototypes<T: Scalar>(xs: &[&[T]], ys: &[usize]) -> Result<Vec<(usize, Vec<T>)>> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    let mut sums: BTreeMap<usize, (Vec<T>, usize)> = BTreeMap::new();
    for (x, &y) in xs.iter().zip(ys) {
        let e = sums.entry(y).or_insert_with(|| (vec![T::zero(); x.len()], 0));
        if e.0.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: e.0.len(),
                found: x.len(),
            });
        }
        e.0.iter_mut().zip(x.iter()).for_each(|(a, &b)| *a += b);
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(y, (mut s, n))| {
            let inv = T::one() / T::from_usize_lossy(n);
            s.iter_mut().for_each(|a| *a *= inv);
            (y, s)
        })
        .collect())
}

/// Label of the closest prototype; ties go to the first (smallest) label. A
/// zero vector has no defined cosine and falls back to the first prototype.
pub fn nearest_prototype<T: Scalar>(protos: &[(usize, Vec<T>)], x: &[T], distance: Distance) -> usize {
    let mut best = 0;
    let mut best_score = T::neg_infinity();
    for (i, (_, p)) in protos.iter().enumerate() {
        let score = match distance {
            Distance::Cosine => cosine(p, x).unwrap_or(T::neg_infinity()),
            Distance::Euclidean => -squared_distance(p, x),
        };
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    protos[best].0
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, "fewshot", &r.to_string())
}

/// Draws `k_shot` training examples per class for each repeat and scores the
/// whole test split against their prototypes.
pub fn few_shot<T: Scalar>(
    dv: &DocumentVectorSet<T>,
    corpus: &Corpus,
    k_shot: usize,
    cfg: &FewShotConfig,
) -> Result<EvalRun> {
    if k_shot == 0 {
        return Err(Error::Config("k_shot must be at least 1".into()));
    }
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let data = LabeledData::new(dv, corpus)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in data.train_y.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    if let Some((&y, idx)) = by_class.iter().find(|(_, idx)| idx.len() < k_shot) {
        return Err(Error::invalid(format!(
            "class {:?} has {} training examples, fewer than {k_shot} shots",
            data.labels[y],
            idx.len()
        )));
    }
    let outcomes: Vec<(f64, f64)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = repeat_seed(cfg.seed, r);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (&y, idx) in &by_class {
                let mut idx = idx.clone();
                idx.shuffle(&mut rng_from_seed(derive_seed(seed, "shots", &y.to_string())));
                for &i in &idx[..k_shot] {
                    xs.push(data.train_x[i]);
                    ys.push(y);
                }
            }
            let protos = prototypes(&xs, &ys)?;
            let pred: Vec<usize> = data
                .test_x
                .iter()
                .map(|x| nearest_prototype(&protos, x, cfg.distance))
                .collect();
            Ok((accuracy(&data.test_y, &pred), macro_f1(&data.test_y, &pred)))
        })
        .collect::<Result<_>>()?;
    let mut per_run = BTreeMap::new();
    per_run.insert("accuracy".to_string(), outcomes.iter().map(|o| o.0).collect());
    per_run.insert("macro_f1".to_string(), outcomes.iter().map(|o| o.1).collect());
    let config = serde_json::json!({
        "k_shot": k_shot,
        "repeats": cfg.repeats,
        "distance": cfg.distance,
        "seed": cfg.seed,
    });
    let seeds = (0..cfg.repeats).map(|r| repeat_seed(cfg.seed, r)).collect();
    let mut run = EvalRun::new(Protocol::Fewshot, config, seeds, per_run)?;
    run.setting = format!("{k_shot}-shot");
    Ok(run)
}

/// One run per shot count, plus the accuracy curve over shots.
pub fn few_shot_curve<T: Scalar>(
    dv: &DocumentVectorSet<T>,
    corpus: &Corpus,
    shots: &[usize],
    cfg: &FewShotConfig,
) -> Result<(Vec<EvalRun>, Curve)> {
    let runs = shots
        .iter()
        .map(|&k| few_shot(dv, corpus, k, cfg))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = shots.iter().map(|&k| k as f64).collect();
    let curve = Curve::from_runs("k_shot", &xs, &runs);
    Ok((runs, curve))
}
