//! Semantic textual similarity: Pearson correlation between cosine scores and
//! graded gold similarities, per task year and macro-averaged.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::docvec::DocumentVectorSet;
use crate::error::{Error, Result};
use crate::eval::metrics::pearson;
use crate::eval::{source_index, EvalRun, Protocol};
use crate::linalg::cosine;
use crate::scalar::Scalar;

/// Sentence pair given by input-file document ids, with a gold score in [0, 5].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub year: String,
    pub a: u64,
    pub b: u64,
    pub gold: f64,
}

/// Per-year Pearson r as metrics `pearson_<year>`, plus `pearson_avg`.
pub fn sts_eval<T: Scalar>(dv: &DocumentVectorSet<T>, corpus: &Corpus, pairs: &[StsPair]) -> Result<EvalRun> {
    let index = source_index(corpus);
    let lookup = |id: u64| -> Result<&[T]> {
        index
            .get(&id)
            .and_then(|&d| dv.get(d))
            .ok_or_else(|| Error::invalid(format!("pair references unknown document {id}")))
    };
    let mut by_year: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut zero = 0usize;
    for p in pairs {
        if !(0.0..=5.0).contains(&p.gold) {
            return Err(Error::invalid(format!("gold score {} outside [0, 5]", p.gold)));
        }
        let score = match cosine(lookup(p.a)?, lookup(p.b)?) {
            Some(c) => c.to_f64_lossy(),
            None => {
                zero += 1;
                0.0
            }
        };
        let e = by_year.entry(p.year.as_str()).or_default();
        e.0.push(score);
        e.1.push(p.gold);
    }
    if zero > 0 {
        log::warn!("{zero} STS pair(s) involve a zero document vector and are scored 0");
    }
    if by_year.is_empty() {
        return Err(Error::invalid("STS evaluation needs at least two pairs"));
    }
    let mut per_run = BTreeMap::new();
    let mut rs = Vec::new();
    for (year, (machine, gold)) in &by_year {
        let r = pearson(machine, gold).map_err(|e| Error::Numeric(format!("year {year}: {e}")))?;
        rs.push(r);
        per_run.insert(format!("pearson_{year}"), vec![r]);
    }
    per_run.insert(
        "pearson_avg".to_string(),
        vec![rs.iter().sum::<f64>() / rs.len() as f64],
    );
    let mut run = EvalRun::new(
        Protocol::Sts,
        serde_json::json!({ "pairs": pairs.len() }),
        vec![0],
        per_run,
    )?;
    run.setting = "sts".into();
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};

    fn fixture() -> (DocumentVectorSet<f64>, Corpus) {
        let angles = [0.0f64, 0.3, 0.7, 1.2, 1.5];
        let mut docs = Vec::new();
        let mut vecs = Vec::new();
        for (i, a) in angles.iter().enumerate() {
            docs.push(Document {
                id: 0,
                source_id: Some(100 + i as u64),
                tokens: vec!["s".into()],
                label: None,
                split: Split::Train,
            });
            vecs.push(vec![a.cos(), a.sin()]);
        }
        (DocumentVectorSet::new(1, 2, vecs).unwrap(), Corpus::new(docs))
    }

    #[test]
    fn gold_equal_to_machine_scores() {
        let (dv, corpus) = fixture();
        let angles = [0.0f64, 0.3, 0.7, 1.2, 1.5];
        let pairs: Vec<StsPair> = (1..5)
            .map(|j| StsPair {
                year: "2012".into(),
                a: 100,
                b: 100 + j,
                gold: 5.0 * (angles[j as usize] - angles[0]).cos(),
            })
            .collect();
        let run = sts_eval(&dv, &corpus, &pairs).unwrap();
        assert!((run.mean["pearson_2012"] - 1.0).abs() < 1e-12);
        assert!((run.mean["pearson_avg"] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs() {
        let (dv, corpus) = fixture();
        let bad = vec![StsPair {
            year: "x".into(),
            a: 100,
            b: 101,
            gold: 6.0,
        }];
        assert!(sts_eval(&dv, &corpus, &bad).is_err());
        let unknown = vec![StsPair {
            year: "x".into(),
            a: 100,
            b: 999,
            gold: 1.0,
        }];
        assert!(sts_eval(&dv, &corpus, &unknown).is_err());
        let flat = vec![
            StsPair {
                year: "x".into(),
                a: 100,
                b: 101,
                gold: 1.0,
            },
            StsPair {
                year: "x".into(),
                a: 100,
                b: 101,
                gold: 2.0,
            },
        ];
        assert!(matches!(sts_eval(&dv, &corpus, &flat), Err(Error::Numeric(_))));
    }
}
