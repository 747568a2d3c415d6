//! Contextual token embeddings aligned to corpus positions.
//!
//! On-disk layout (`CEB1`, little-endian):
//!
//! ```text
//! "CEB1"  u16 version = 1  u32 dim
//! repeated until EOF:
//!     u32 doc_id  u32 token_index  u16 len  [len bytes UTF-8]  [dim x f32]
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

pub const CEB1_MAGIC: &[u8; 4] = b"CEB1";
pub const CEB1_VERSION: u16 = 1;
const HEADER_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedFormat {
    #[default]
    Ceb1,
    Jsonl,
}

impl FromStr for EmbedFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ceb1" | "ceb" | "bin" => Ok(EmbedFormat::Ceb1),
            "jsonl" | "json" => Ok(EmbedFormat::Jsonl),
            other => Err(Error::Config(format!("unknown embedding format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordMeta {
    pub doc_id: u32,
    pub token_index: u32,
    pub token: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occurrence<'a> {
    pub doc_id: u32,
    pub token_index: u32,
    pub vector: &'a [f32],
}

#[derive(Debug, Clone)]
pub struct ContextualEmbeddingStore {
    dim: usize,
    meta: Vec<RecordMeta>,
    data: Vec<f32>,
    by_word: BTreeMap<String, Vec<usize>>,
    by_position: HashMap<(u32, u32), usize>,
}

impl PartialEq for ContextualEmbeddingStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.meta == other.meta
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ContextualEmbeddingStore {
    pub fn new(dim: usize) -> Self {
        ContextualEmbeddingStore {
            dim,
            meta: Vec::new(),
            data: Vec::new(),
            by_word: BTreeMap::new(),
            by_position: HashMap::new(),
        }
    }

    pub fn push(&mut self, doc_id: u32, token_index: u32, token: impl Into<String>, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let token = token.into();
        if token.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("token longer than {} bytes", u16::MAX)));
        }
        let idx = self.meta.len();
        if self.by_position.insert((doc_id, token_index), idx).is_some() {
            return Err(Error::DuplicateRecord {
                doc: doc_id,
                tok: token_index,
            });
        }
        let list = self.by_word.entry(token.clone()).or_default();
        // keep each word's list in (doc, token) order
        let key = (doc_id, token_index);
        let pos = list.partition_point(|&i| {
            let m = &self.meta[i];
            (m.doc_id, m.token_index) < key
        });
        list.insert(pos, idx);
        self.meta.push(RecordMeta {
            doc_id,
            token_index,
            token,
        });
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn record(&self, i: usize) -> (&RecordMeta, &[f32]) {
        (&self.meta[i], &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn records(&self) -> impl Iterator<Item = (&RecordMeta, &[f32])> + '_ {
        (0..self.len()).map(move |i| self.record(i))
    }

    /// Distinct surface words, sorted.
    pub fn words(&self) -> impl Iterator<Item = &str> + '_ {
        self.by_word.keys().map(String::as_str)
    }

    pub fn num_words(&self) -> usize {
        self.by_word.len()
    }

    pub fn vector_at(&self, doc_id: u32, token_index: u32) -> Option<&[f32]> {
        self.by_position.get(&(doc_id, token_index)).map(|&i| self.record(i).1)
    }

    /// All occurrences of `word` in (doc_id, token_index) order; empty when absent.
    pub fn occurrences_of(&self, word: &str) -> Vec<Occurrence<'_>> {
        self.by_word
            .get(word)
            .map(|idxs| {
                idxs.iter()
                    .map(|&i| {
                        let (m, v) = self.record(i);
                        Occurrence {
                            doc_id: m.doc_id,
                            token_index: m.token_index,
                            vector: v,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Checks every record against the corpus token at its position.
    pub fn validate_alignment(&self, corpus: &Corpus) -> Result<()> {
        for m in &self.meta {
            let expected = corpus.doc(m.doc_id).and_then(|d| d.tokens.get(m.token_index as usize));
            match expected {
                Some(t) if t.to_lowercase() == m.token.to_lowercase() => {}
                other => {
                    return Err(Error::Alignment {
                        doc: m.doc_id,
                        tok: m.token_index,
                        expected: other.cloned().unwrap_or_else(|| "<out of range>".into()),
                        found: m.token.clone(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn to_ceb1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4 + self.meta.len() * 16);
        out.extend_from_slice(CEB1_MAGIC);
        out.extend_from_slice(&CEB1_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (m, v) in self.records() {
            out.extend_from_slice(&m.doc_id.to_le_bytes());
            out.extend_from_slice(&m.token_index.to_le_bytes());
            out.extend_from_slice(&(m.token.len() as u16).to_le_bytes());
            out.extend_from_slice(m.token.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_ceb1_bytes(bytes: &[u8], expected_dim: Option<usize>) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format {
                offset: 0,
                msg: "file shorter than CEB1 header".into(),
            });
        }
        if &bytes[..4] != CEB1_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"CEB1\"".into(),
            });
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CEB1_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported version {version}"),
            });
        }
        let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
        if let Some(want) = expected_dim {
            if want != dim {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    found: dim,
                });
            }
        }
        let mut store = ContextualEmbeddingStore::new(dim);
        let mut pos = HEADER_LEN;
        let mut vec = vec![0f32; dim];
        while pos < bytes.len() {
            let start = pos;
            let truncated = || Error::Format {
                offset: start as u64,
                msg: "truncated record".into(),
            };
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = bytes.get(*pos..*pos + n).ok_or_else(truncated)?;
                *pos += n;
                Ok(s)
            };
            let doc = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let tok = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let word = std::str::from_utf8(take(&mut pos, len)?)
                .map_err(|_| Error::Format {
                    offset: start as u64 + 10,
                    msg: "token is not valid UTF-8".into(),
                })?
                .to_owned();
            let raw = take(&mut pos, dim * 4)?;
            for (dst, chunk) in vec.iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            store.push(doc, tok, word, &vec)?;
        }
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (m, v) in self.records() {
            let rec = JsonRecord {
                doc: m.doc_id,
                tok: m.token_index,
                w: m.token.clone(),
                v: v.to_vec(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, expected_dim: Option<usize>) -> Result<Self> {
        let mut store: Option<ContextualEmbeddingStore> = expected_dim.map(Self::new);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let s = store.get_or_insert_with(|| Self::new(rec.v.len()));
            s.push(rec.doc, rec.tok, rec.w, &rec.v)?;
        }
        store.ok_or_else(|| Error::Parse {
            line: 0,
            msg: "empty JSONL store and no expected dimension".into(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    doc: u32,
    tok: u32,
    w: String,
    v: Vec<f32>,
}

pub fn read_store(path: &Path, format: EmbedFormat, expected_dim: Option<usize>) -> Result<ContextualEmbeddingStore> {
    match format {
        EmbedFormat::Ceb1 => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            ContextualEmbeddingStore::from_ceb1_bytes(&bytes, expected_dim)
        }
        EmbedFormat::Jsonl => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            ContextualEmbeddingStore::from_jsonl(&text, expected_dim)
        }
    }
}

pub fn write_store(store: &ContextualEmbeddingStore, path: &Path, format: EmbedFormat) -> Result<()> {
    let bytes = match format {
        EmbedFormat::Ceb1 => store.to_ceb1_bytes(),
        EmbedFormat::Jsonl => store.to_jsonl().into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Split};
    use proptest::prelude::*;

    fn small_store() -> ContextualEmbeddingStore {
        let mut s = ContextualEmbeddingStore::new(2);
        s.push(1, 0, "bank", &[0.0, 1.0]).unwrap();
        s.push(0, 3, "bank", &[1.0, 0.0]).unwrap();
        s.push(0, 1, "river", &[0.5, 0.5]).unwrap();
        s.push(2, 0, "bank", &[-1.0, 0.0]).unwrap();
        s
    }

    #[test]
    fn empty_store_is_ten_bytes() {
        let s = ContextualEmbeddingStore::new(4);
        let b = s.to_ceb1_bytes();
        assert_eq!(b.len(), 10);
        assert_eq!(&b[..4], b"CEB1");
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..10], &[4, 0, 0, 0]);
    }

    #[test]
    fn single_record_payload_encoding() {
        let mut s = ContextualEmbeddingStore::new(2);
        s.push(0, 0, "a", &[1.0, 0.0]).unwrap();
        let b = s.to_ceb1_bytes();
        assert_eq!(&b[b.len() - 8..], &[0x00, 0x00, 0x80, 0x3F, 0, 0, 0, 0]);
        assert_eq!(b.len(), 10 + 4 + 4 + 2 + 1 + 8);
    }

    #[test]
    fn roundtrip_and_determinism() {
        let s = small_store();
        let b1 = s.to_ceb1_bytes();
        let back = ContextualEmbeddingStore::from_ceb1_bytes(&b1, None).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_ceb1_bytes(), b1);
        let j = ContextualEmbeddingStore::from_jsonl(&s.to_jsonl(), None).unwrap();
        assert_eq!(j, s);
    }

    #[test]
    fn truncation_reports_offset() {
        let s = small_store();
        let b = s.to_ceb1_bytes();
        // first record: 4+4+2+4 bytes of header/token + 8 bytes vector = 22
        let cut = &b[..10 + 22 + 15];
        match ContextualEmbeddingStore::from_ceb1_bytes(cut, None) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_dim_mismatch() {
        let mut b = small_store().to_ceb1_bytes();
        assert!(matches!(
            ContextualEmbeddingStore::from_ceb1_bytes(&b, Some(200)),
            Err(Error::DimensionMismatch {
                expected: 200,
                found: 2
            })
        ));
        b[0] = b'X';
        assert!(matches!(
            ContextualEmbeddingStore::from_ceb1_bytes(&b, None),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn duplicate_position_rejected() {
        let mut s = small_store();
        assert!(matches!(
            s.push(0, 3, "x", &[0.0, 0.0]),
            Err(Error::DuplicateRecord { doc: 0, tok: 3 })
        ));
    }

    #[test]
    fn occurrences_in_document_order() {
        let s = small_store();
        let occ = s.occurrences_of("bank");
        let pos: Vec<(u32, u32)> = occ.iter().map(|o| (o.doc_id, o.token_index)).collect();
        assert_eq!(pos, [(0, 3), (1, 0), (2, 0)]);
        assert_eq!(occ[0].vector, &[1.0, 0.0]);
        assert!(s.occurrences_of("absent").is_empty());
    }

    #[test]
    fn alignment_validation() {
        let doc = |id, toks: &[&str]| Document {
            id,
            source_id: None,
            tokens: toks.iter().map(|t| t.to_string()).collect(),
            label: None,
            split: Split::Train,
        };
        let corpus = Corpus::new(vec![doc(0, &["he", "went", "to", "bank"])]);
        let mut s = ContextualEmbeddingStore::new(1);
        s.push(0, 3, "Bank", &[1.0]).unwrap();
        s.validate_alignment(&corpus).unwrap();
        s.push(0, 1, "walked", &[1.0]).unwrap();
        match s.validate_alignment(&corpus) {
            Err(Error::Alignment { doc: 0, tok: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let mut s = ContextualEmbeddingStore::new(1);
        s.push(5, 0, "he", &[1.0]).unwrap();
        assert!(s.validate_alignment(&corpus).is_err());
    }

    fn arb_store() -> impl Strategy<Value = ContextualEmbeddingStore> {
        (1usize..5).prop_flat_map(|dim| {
            prop::collection::btree_map(
                (0u32..6, 0u32..6),
                (
                    prop::sample::select(vec!["a", "bank", "ü", "river", "x"]),
                    prop::collection::vec(-1e3f32..1e3, dim),
                ),
                0..25,
            )
            .prop_map(move |m| {
                let mut s = ContextualEmbeddingStore::new(dim);
                // reverse insertion so record order differs from key order
                for ((d, t), (w, v)) in m.into_iter().rev() {
                    s.push(d, t, w, &v).unwrap();
                }
                s
            })
        })
    }

    proptest! {
        #[test]
        fn read_write_identity(s in arb_store()) {
            let back = ContextualEmbeddingStore::from_ceb1_bytes(&s.to_ceb1_bytes(), Some(s.dim())).unwrap();
            prop_assert_eq!(&back, &s);
        }

        #[test]
        fn occurrence_index_matches_linear_scan(s in arb_store()) {
            let mut total = 0;
            for w in s.words() {
                let got: Vec<(u32, u32)> = s.occurrences_of(w).iter().map(|o| (o.doc_id, o.token_index)).collect();
                let mut want: Vec<(u32, u32)> = s.records().filter(|(m, _)| m.token == w).map(|(m, _)| (m.doc_id, m.token_index)).collect();
                want.sort();
                prop_assert_eq!(&got, &want);
                total += got.len();
            }
            prop_assert_eq!(total, s.len());
        }
    }
}
