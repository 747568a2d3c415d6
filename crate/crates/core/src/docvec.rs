//! Word-topic vectors and document vectors.
//!
//! A sense-tagged token's word-topic vector concatenates `K` blocks; block `o`
//! is the token's vector scaled by its idf and by its posterior for mixture
//! component `o`. A document vector averages the word-topic vectors of its
//! token occurrences.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DVB1_MAGIC: &[u8; 4] = b"DVB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean over token occurrences; repeated tokens count every time.
    #[default]
    Occurrence,
    /// Mean over the distinct sense-tagged tokens of the document.
    UniqueType,
}

pub fn build_word_topic_vector<T: Scalar>(w_vec: &[T], posteriors: &[T], idf: T) -> Result<Vec<T>> {
    if posteriors.is_empty() || w_vec.is_empty() {
        return Err(Error::invalid("empty word vector or posterior"));
    }
    if idf < T::zero() || !idf.is_finite() {
        return Err(Error::invalid(format!(
            "idf must be finite and non-negative, got {idf}"
        )));
    }
    let sum: T = posteriors.iter().copied().sum();
    if (sum - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::invalid(format!("posteriors sum to {sum}, expected 1")));
    }
    let mut out = Vec::with_capacity(posteriors.len() * w_vec.len());
    for &p in posteriors {
        let scale = idf * p;
        out.extend(w_vec.iter().map(|&x| scale * x));
    }
    Ok(out)
}

/// Word-topic vectors keyed by sense-tagged token.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTopicTable<T> {
    k: usize,
    d: usize,
    entries: HashMap<String, Vec<T>>,
}

impl<T: Scalar> WordTopicTable<T> {
    pub fn new(k: usize, d: usize) -> Self {
        WordTopicTable {
            k,
            d,
            entries: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, wtv: Vec<T>) -> Result<()> {
        if wtv.len() != self.k * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.k * self.d,
                found: wtv.len(),
            });
        }
        self.entries.insert(token.into(), wtv);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Result<&[T]> {
        self.entries
            .get(token)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn dim(&self) -> usize {
        self.k * self.d
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Averages the word-topic vectors of one document.
///
/// `tokens` yields the sense-tagged token of each occurrence, or `None` for
/// occurrences without an embedding; those are skipped and left out of the
/// denominator. Returns the vector and the number of occurrences used.
pub fn build_document_vector<'a, T: Scalar>(
    tokens: impl IntoIterator<Item = Option<&'a str>>,
    table: &WordTopicTable<T>,
    averaging: Averaging,
) -> Result<(Vec<T>, usize)> {
    let mut acc = vec![T::zero(); table.dim()];
    let mut used = 0usize;
    let mut add = |tok: &str| -> Result<()> {
        let v = table.get(tok)?;
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        used += 1;
        Ok(())
    };
    match averaging {
        Averaging::Occurrence => {
            for tok in tokens.into_iter().flatten() {
                add(tok)?;
            }
        }
        Averaging::UniqueType => {
            let uniq: BTreeSet<&str> = tokens.into_iter().flatten().collect();
            for tok in uniq {
                add(tok)?;
            }
        }
    }
    if used > 0 {
        let inv = T::one() / T::from_usize_lossy(used);
        acc.iter_mut().for_each(|a| *a *= inv);
    }
    Ok((acc, used))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentVectorSet<T> {
    k: usize,
    d: usize,
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> DocumentVectorSet<T> {
    pub fn new(k: usize, d: usize, vectors: Vec<Vec<T>>) -> Result<Self> {
        if let Some(v) = vectors.iter().find(|v| v.len() != k * d) {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                found: v.len(),
            });
        }
        Ok(DocumentVectorSet { k, d, vectors })
    }

    pub fn num_components(&self) -> usize {
        self.k
    }

    pub fn word_dim(&self) -> usize {
        self.d
    }

    pub fn dim(&self) -> usize {
        self.k * self.d
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn get(&self, doc_id: u32) -> Option<&[T]> {
        self.vectors.get(doc_id as usize).map(Vec::as_slice)
    }

    pub fn map_vectors(&self, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        Self::new(self.k, self.d, self.vectors.iter().map(|v| f(v)).collect())
    }

    /// `DVB1` little-endian: magic, `u32 dim`, then `u32 doc_id` + `dim x f32`
    /// per document.
    pub fn to_bytes(&self) -> Vec<u8> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(8 + self.len() * (4 + 4 * dim));
        out.extend_from_slice(DVB1_MAGIC);
        out.extend_from_slice(&(dim as u32).to_le_bytes());
        for (i, v) in self.vectors.iter().enumerate() {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            for &x in v {
                out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
            }
        }
        out
    }

    /// Parses `DVB1`; `k` splits the stored dimension into `K x d` blocks.
    pub fn from_bytes(bytes: &[u8], k: usize) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != DVB1_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"DVB1\"".into(),
            });
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if k == 0 || !dim.is_multiple_of(k) {
            return Err(Error::invalid(format!("dimension {dim} is not a multiple of K = {k}")));
        }
        let rec = 4 + 4 * dim;
        let body = &bytes[8..];
        if !body.len().is_multiple_of(rec) {
            let off = 8 + body.len() / rec * rec;
            return Err(Error::Format {
                offset: off as u64,
                msg: "truncated record".into(),
            });
        }
        let n = body.len() / rec;
        let mut vectors: Vec<Option<Vec<T>>> = vec![None; n];
        for (r, chunk) in body.chunks_exact(rec).enumerate() {
            let id = u32::from_le_bytes(chunk[..4].try_into().unwrap()) as usize;
            let slot = vectors.get_mut(id).ok_or_else(|| Error::Format {
                offset: (8 + r * rec) as u64,
                msg: format!("doc id {id} outside 0..{n}"),
            })?;
            if slot.is_some() {
                return Err(Error::DuplicateId(id as u64));
            }
            *slot = Some(
                chunk[4..]
                    .chunks_exact(4)
                    .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect(),
            );
        }
        let vectors = vectors.into_iter().map(|v| v.expect("ids are dense")).collect();
        Self::new(k, dim / k, vectors)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, k: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, k)
    }

    /// CSV export for inspection: `doc_id,v0,v1,...`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("doc_id");
        for j in 0..self.dim() {
            let _ = write!(out, ",v{j}");
        }
        out.push('\n');
        for (i, v) in self.vectors.iter().enumerate() {
            let _ = write!(out, "{i}");
            for x in v {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

/// Zeroes entries whose magnitude is below `p`% of the mean half-range
/// `(|max| + |min|) / 2` over documents.
pub fn sparsify<T: Scalar>(set: &DocumentVectorSet<T>, p: f64) -> Result<DocumentVectorSet<T>> {
    if !(0.0..100.0).contains(&p) {
        return Err(Error::Config(format!(
            "sparsity percentage must lie in [0, 100), got {p}"
        )));
    }
    if p == 0.0 || set.is_empty() {
        return Ok(set.clone());
    }
    let half_ranges: T = set
        .vectors()
        .iter()
        .map(|v| {
            let max = v.iter().copied().fold(T::neg_infinity(), T::max);
            let min = v.iter().copied().fold(T::infinity(), T::min);
            (max.abs() + min.abs()) * T::lit(0.5)
        })
        .sum();
    let t = half_ranges / T::from_usize_lossy(set.len());
    let threshold = T::lit(p / 100.0) * t;
    set.map_vectors(|v| {
        v.iter()
            .map(|&x| if x.abs() < threshold { T::zero() } else { x })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_topic_examples() {
        let w = [0.3, -0.7];
        assert_eq!(build_word_topic_vector(&w, &[1.0], 1.0).unwrap(), w.to_vec());
        let (a, b) = (1.5, -2.0);
        assert_eq!(
            build_word_topic_vector(&[a, b], &[1.0, 0.0], 2.0).unwrap(),
            vec![2.0 * a, 2.0 * b, 0.0, 0.0]
        );
        let z = build_word_topic_vector(&[a, b, 1.0], &[0.25, 0.75], 0.0).unwrap();
        assert_eq!(z, vec![0.0; 6]);
        assert!(build_word_topic_vector(&[1.0], &[0.5, 0.4], 1.0).is_err());
        assert!(build_word_topic_vector(&[1.0], &[1.0], -1.0).is_err());
    }

    fn table() -> WordTopicTable<f64> {
        let mut t = WordTopicTable::new(2, 1);
        t.insert("a#1", vec![1.0, 2.0]).unwrap();
        t.insert("b#1", vec![4.0, -2.0]).unwrap();
        t
    }

    #[test]
    fn document_means() {
        let t = table();
        let (v, used) = build_document_vector([Some("a#1")], &t, Averaging::Occurrence).unwrap();
        assert_eq!((v, used), (vec![1.0, 2.0], 1));
        let (v, _) = build_document_vector([Some("a#1"), Some("a#1"), Some("b#1")], &t, Averaging::Occurrence).unwrap();
        assert_eq!(v, vec![(2.0 * 1.0 + 4.0) / 3.0, (2.0 * 2.0 - 2.0) / 3.0]);
        let (v, used) =
            build_document_vector([Some("a#1"), None, Some("b#1"), Some("a#1")], &t, Averaging::UniqueType).unwrap();
        assert_eq!((v, used), (vec![2.5, 0.0], 2));
        let (v, used) = build_document_vector([None, None], &t, Averaging::Occurrence).unwrap();
        assert_eq!((v, used), (vec![0.0, 0.0], 0));
        assert!(matches!(
            build_document_vector([Some("zz#1")], &t, Averaging::Occurrence),
            Err(Error::UnknownToken(_))
        ));
    }

    #[test]
    fn dvb1_roundtrip() {
        let set = DocumentVectorSet::new(2, 2, vec![vec![1.0, 0.5, -0.25, 0.0], vec![0.0; 4]]).unwrap();
        let b = set.to_bytes();
        assert_eq!(&b[..4], b"DVB1");
        assert_eq!(b.len(), 8 + 2 * (4 + 16));
        let back = DocumentVectorSet::<f64>::from_bytes(&b, 2).unwrap();
        assert_eq!(back, set);
        assert!(DocumentVectorSet::<f64>::from_bytes(&b[..b.len() - 3], 2).is_err());
        assert!(DocumentVectorSet::<f64>::from_bytes(&b, 3).is_err());
        assert!(set.to_csv().starts_with("doc_id,v0,v1,v2,v3\n0,1,0.5,-0.25,0\n"));
    }

    #[test]
    fn sparsify_examples() {
        let set = DocumentVectorSet::new(1, 4, vec![vec![1.0, -1.0, 1.0, -1.0], vec![-1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(sparsify(&set, 0.0).unwrap(), set);
        assert_eq!(sparsify(&set, 50.0).unwrap(), set);

        let set = DocumentVectorSet::new(1, 4, vec![vec![10.0, 0.1, 0.2, 0.05], vec![0.1, 0.3, 12.0, 0.2]]).unwrap();
        let s = sparsify(&set, 99.0).unwrap();
        assert_eq!(s.vectors()[0], vec![10.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.vectors()[1], vec![0.0, 0.0, 12.0, 0.0]);
        assert!(sparsify(&set, 100.0).is_err());
    }

    proptest! {
        #[test]
        fn reconstruction_linearity_and_order(
            d in 1usize..4,
            k in 1usize..4,
            raw in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 4), prop::collection::vec(0.01f64..1.0, 4), 0.0f64..3.0), 1..5),
            doc in prop::collection::vec(0usize..5, 1..12),
            scale in 0.1f64..10.0,
        ) {
            let mut table = WordTopicTable::new(k, d);
            let mut scaled = WordTopicTable::new(k, d);
            let mut parts = Vec::new();
            for (i, (w, p, idf)) in raw.iter().enumerate() {
                let w = &w[..d];
                let total: f64 = p[..k].iter().sum();
                let post: Vec<f64> = p[..k].iter().map(|x| x / total).collect();
                let wtv = build_word_topic_vector(w, &post, *idf).unwrap();
                prop_assert_eq!(wtv.len(), k * d);
                scaled.insert(format!("t{i}"), wtv.iter().map(|x| x * scale).collect()).unwrap();
                table.insert(format!("t{i}"), wtv).unwrap();
                parts.push((w.to_vec(), post, *idf));
            }
            let toks: Vec<String> = doc.iter().map(|&j| format!("t{}", j % raw.len())).collect();
            let (dv, used) = build_document_vector(toks.iter().map(|s| Some(s.as_str())), &table, Averaging::Occurrence).unwrap();
            prop_assert_eq!(used, toks.len());
            // brute force: blockwise idf * P(o) * w averaged over occurrences
            for o in 0..k {
                for j in 0..d {
                    let want: f64 = doc.iter().map(|&t| {
                        let (w, post, idf) = &parts[t % raw.len()];
                        idf * post[o] * w[j]
                    }).sum::<f64>() / doc.len() as f64;
                    let got = dv[o * d + j];
                    prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
            let (sv, _) = build_document_vector(toks.iter().map(|s| Some(s.as_str())), &scaled, Averaging::Occurrence).unwrap();
            for (a, b) in sv.iter().zip(&dv) {
                prop_assert!((a - scale * b).abs() <= 1e-12 * b.abs().max(1.0) * scale);
            }
            let mut rev = toks.clone();
            rev.reverse();
            let (rv, _) = build_document_vector(rev.iter().map(|s| Some(s.as_str())), &table, Averaging::Occurrence).unwrap();
            for (a, b) in rv.iter().zip(&dv) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
