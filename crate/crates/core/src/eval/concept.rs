//! Concept-to-project matching by thresholded cosine similarity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::docvec::DocumentVectorSet;
use crate::error::{Error, Result};
use crate::eval::{source_index, EvalRun, Protocol};
use crate::linalg::cosine;
use crate::scalar::Scalar;

/// A labeled pair; both sides are input-file document ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub concept: u64,
    pub project: u64,
    #[serde(rename = "match")]
    pub is_match: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub threshold: f64,
    pub accuracy: f64,
    pub f1: f64,
}

fn binary_scores(pred: impl Iterator<Item = bool>, gold: &[bool]) -> (f64, f64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (p, &g) in pred.zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let n = (tp + fp + fn_ + tn).max(1) as f64;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    };
    ((tp + tn) as f64 / n, f1)
}

/// Sweeps thresholds 0.00, 0.01, ..., 1.00 and keeps the best F1; ties go to
/// the smallest threshold. A `None` score never matches.
pub fn sweep_threshold(scores: &[Option<f64>], gold: &[bool]) -> Result<ThresholdSweep> {
    if scores.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::invalid("concept matching needs at least one pair"));
    }
    let mut best: Option<ThresholdSweep> = None;
    for step in 0..=100 {
        let theta = step as f64 / 100.0;
        let pred = scores.iter().map(|s| s.is_some_and(|s| s >= theta));
        let (accuracy, f1) = binary_scores(pred, gold);
        if best.as_ref().is_none_or(|b| f1 > b.f1) {
            best = Some(ThresholdSweep {
                threshold: theta,
                accuracy,
                f1,
            });
        }
    }
    Ok(best.expect("sweep is nonempty"))
}

/// Scores each pair by cosine of its document vectors and reports the
/// best-F1 threshold with its accuracy.
pub fn concept_match<T: Scalar>(dv: &DocumentVectorSet<T>, corpus: &Corpus, pairs: &[ConceptPair]) -> Result<EvalRun> {
    let index = source_index(corpus);
    let lookup = |id: u64| -> Result<&[T]> {
        index
            .get(&id)
            .and_then(|&d| dv.get(d))
            .ok_or_else(|| Error::invalid(format!("pair references unknown document {id}")))
    };
    let mut scores = Vec::with_capacity(pairs.len());
    let mut zero = 0usize;
    for p in pairs {
        let s = cosine(lookup(p.concept)?, lookup(p.project)?).map(|c| c.to_f64_lossy());
        if s.is_none() {
            zero += 1;
        }
        scores.push(s);
    }
    if zero > 0 {
        log::warn!("{zero} pair(s) involve a zero document vector and are scored as non-matches");
    }
    let gold: Vec<bool> = pairs.iter().map(|p| p.is_match).collect();
    let best = sweep_threshold(&scores, &gold)?;
    let mut per_run = BTreeMap::new();
    per_run.insert("accuracy".to_string(), vec![best.accuracy]);
    per_run.insert("f1".to_string(), vec![best.f1]);
    let mut run = EvalRun::new(
        Protocol::Concept,
        serde_json::json!({ "pairs": pairs.len() }),
        vec![0],
        per_run,
    )?;
    run.setting = "concept".into();
    run.details = serde_json::json!({ "threshold": best.threshold, "zero_vector_pairs": zero });
    Ok(run)
}
