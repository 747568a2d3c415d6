//! Evaluation protocols over document vectors: supervised classification
//! (full and limited data), prototypical few-shot, concept matching and STS.
//!
//! Every protocol yields an [`EvalRun`] holding per-run metrics as fractions
//! together with their mean and sample standard deviation.

pub mod classify;
pub mod concept;
pub mod fewshot;
pub mod linear;
pub mod metrics;
pub mod report;
pub mod sts;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::docvec::DocumentVectorSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use classify::{evaluate_classification, limited_data_curve, nested_subsamples, ClassifyConfig};
pub use concept::{concept_match, sweep_threshold, ConceptPair, ThresholdSweep};
pub use fewshot::{few_shot, nearest_prototype, prototypes, Distance, FewShotConfig};
pub use linear::{train_linear, tune_c, LinearConfig, LinearModel, TuneResult, DEFAULT_C_GRID};
pub use report::Table;
pub use sts::{sts_eval, StsPair};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Full,
    Limited,
    Fewshot,
    Concept,
    Sts,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protocol::Full => "full",
            Protocol::Limited => "limited",
            Protocol::Fewshot => "fewshot",
            Protocol::Concept => "concept",
            Protocol::Sts => "sts",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub protocol: Protocol,
    /// Method name shown as the report row, e.g. `ctxd`.
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub dataset: String,
    /// Short qualifier for the report column, e.g. `10%` or `5-shot`.
    #[serde(default)]
    pub setting: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub per_run: BTreeMap<String, Vec<f64>>,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
    /// Protocol-specific extras such as the chosen C or threshold per run.
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl EvalRun {
    /// Aggregates per-run metric values; every metric must have one value per seed.
    pub fn new(
        protocol: Protocol,
        config: serde_json::Value,
        seeds: Vec<u64>,
        per_run: BTreeMap<String, Vec<f64>>,
    ) -> Result<Self> {
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        for (k, vals) in &per_run {
            if vals.len() != seeds.len() {
                return Err(Error::DimensionMismatch {
                    expected: seeds.len(),
                    found: vals.len(),
                });
            }
            let (m, s) = metrics::mean_std(vals);
            mean.insert(k.clone(), m);
            std.insert(k.clone(), s);
        }
        Ok(EvalRun {
            protocol,
            name: String::new(),
            dataset: String::new(),
            setting: String::new(),
            config,
            config_hash: String::new(),
            seeds,
            per_run,
            mean,
            std,
            details: serde_json::Value::Null,
        })
    }

    /// Largest absolute gap between the stored aggregates and a recomputation.
    pub fn aggregate_error(&self) -> f64 {
        let mut worst = 0f64;
        for (k, vals) in &self.per_run {
            let (m, s) = metrics::mean_std(vals);
            let gm = self.mean.get(k).map_or(f64::INFINITY, |v| (v - m).abs());
            let gs = self.std.get(k).map_or(f64::INFINITY, |v| (v - s).abs());
            worst = worst.max(gm).max(gs);
        }
        worst
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("EvalRun serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// One row per run: `run,seed,<metrics...>`.
    pub fn to_csv(&self) -> String {
        let keys: Vec<&String> = self.per_run.keys().collect();
        let mut out = String::from("run,seed");
        for k in &keys {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (i, seed) in self.seeds.iter().enumerate() {
            out.push_str(&format!("{i},{seed}"));
            for k in &keys {
                out.push_str(&format!(",{}", self.per_run[*k][i]));
            }
            out.push('\n');
        }
        out
    }
}

/// A figure-ready curve: accuracy against training fraction or shots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub x_label: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub accuracy: f64,
    pub std: f64,
}

impl Curve {
    pub fn from_runs(x_label: &str, xs: &[f64], runs: &[EvalRun]) -> Self {
        let points = xs
            .iter()
            .zip(runs)
            .map(|(&x, r)| CurvePoint {
                x,
                accuracy: r.mean.get("accuracy").copied().unwrap_or(f64::NAN),
                std: r.std.get("accuracy").copied().unwrap_or(f64::NAN),
            })
            .collect();
        Curve {
            x_label: x_label.to_string(),
            points,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},accuracy,std\n", self.x_label);
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.x, p.accuracy, p.std));
        }
        out
    }
}

/// Labeled train and test vectors with labels mapped to indices of the sorted
/// corpus label set; unlabeled documents are skipped.
pub struct LabeledData<'a, T> {
    pub labels: Vec<String>,
    pub train_x: Vec<&'a [T]>,
    pub train_y: Vec<usize>,
    pub test_x: Vec<&'a [T]>,
    pub test_y: Vec<usize>,
}

impl<'a, T: Scalar> LabeledData<'a, T> {
    pub fn new(dv: &'a DocumentVectorSet<T>, corpus: &Corpus) -> Result<Self> {
        let labels = corpus.label_set().to_vec();
        let mut data = LabeledData {
            labels,
            train_x: Vec::new(),
            train_y: Vec::new(),
            test_x: Vec::new(),
            test_y: Vec::new(),
        };
        if dv.len() != corpus.num_docs() {
            return Err(Error::DimensionMismatch {
                expected: corpus.num_docs(),
                found: dv.len(),
            });
        }
        for doc in corpus.docs() {
            let Some(label) = &doc.label else { continue };
            let y = data.labels.binary_search(label).expect("label set covers every label");
            let x = dv.get(doc.id).expect("length checked");
            match doc.split {
                Split::Train => {
                    data.train_x.push(x);
                    data.train_y.push(y);
                }
                Split::Test => {
                    data.test_x.push(x);
                    data.test_y.push(y);
                }
            }
        }
        if data.train_x.is_empty() || data.test_x.is_empty() {
            return Err(Error::invalid("evaluation needs labeled train and test documents"));
        }
        Ok(data)
    }
}

/// Maps input-file ids to dense document ids.
pub(crate) fn source_index(corpus: &Corpus) -> BTreeMap<u64, u32> {
    corpus
        .docs()
        .iter()
        .map(|d| (d.source_id.unwrap_or(d.id as u64), d.id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_recompute() {
        let mut per_run = BTreeMap::new();
        per_run.insert("accuracy".to_string(), vec![0.9, 0.95, 1.0]);
        let run = EvalRun::new(Protocol::Full, serde_json::json!({}), vec![1, 2, 3], per_run).unwrap();
        assert!(run.aggregate_error() < 1e-12);
        assert!((run.std["accuracy"] - 0.05).abs() < 1e-12);
        let back = EvalRun::from_json(&run.to_json()).unwrap();
        assert_eq!(back, run);
        assert_eq!(run.to_csv().lines().count(), 4);
    }

    #[test]
    fn mismatched_runs_rejected() {
        let mut per_run = BTreeMap::new();
        per_run.insert("accuracy".to_string(), vec![0.9]);
        assert!(EvalRun::new(Protocol::Full, serde_json::json!({}), vec![1, 2], per_run).is_err());
    }
}
