//! Corpus ingestion, tokenization and inverse document frequencies.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    #[default]
    Jsonl,
    Tsv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "tsv" => Ok(CorpusFormat::Tsv),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    /// Dense id in input order.
    pub id: u32,
    /// Id given in the input file, when the format carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<u64>,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub split: Split,
}

impl Document {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    docs: Vec<Document>,
    vocab: BTreeSet<String>,
    label_set: Vec<String>,
}

impl Corpus {
    /// Builds a corpus from documents in order, reassigning dense ids.
    pub fn new(mut docs: Vec<Document>) -> Self {
        let mut vocab = BTreeSet::new();
        let mut labels = BTreeSet::new();
        for (i, doc) in docs.iter_mut().enumerate() {
            doc.id = i as u32;
            vocab.extend(doc.tokens.iter().cloned());
            if let Some(l) = &doc.label {
                labels.insert(l.clone());
            }
        }
        let empty = docs.iter().filter(|d| d.is_empty()).count();
        if empty > 0 {
            log::warn!("corpus contains {empty} empty document(s)");
        }
        Corpus {
            docs,
            vocab,
            label_set: labels.into_iter().collect(),
        }
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, id: u32) -> Option<&Document> {
        self.docs.get(id as usize)
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    /// Sorted class labels.
    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn split_ids(&self, split: Split) -> Vec<u32> {
        self.docs.iter().filter(|d| d.split == split).map(|d| d.id).collect()
    }

    /// Writes the corpus in the tokens flavour of the JSONL format.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for d in &self.docs {
            let rec = RawRecord {
                id: Some(d.source_id.unwrap_or(d.id as u64)),
                text: None,
                tokens: Some(d.tokens.clone()),
                label: d.label.clone(),
                split: Some(d.split),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Lowercases and splits on every character that is not alphanumeric.
pub fn tokenize(raw: &str) -> Vec<String> {
    // Fold case before splitting: some characters lowercase into sequences
    // containing combining marks, which must act as separators too.
    raw.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Corpus> {
    match format {
        CorpusFormat::Jsonl => parse_jsonl(text),
        CorpusFormat::Tsv => parse_tsv(text),
    }
}

fn parse_jsonl(text: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let id = rec.id.ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "missing \"id\" field".into(),
        })?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        let tokens = match (rec.tokens, rec.text) {
            // Pre-tokenized input still goes through case folding so that it
            // aligns with the extractor's view of the text.
            (Some(toks), _) => toks.iter().flat_map(|t| tokenize(t)).collect(),
            (None, Some(text)) => tokenize(&text),
            (None, None) => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "record has neither \"tokens\" nor \"text\"".into(),
                })
            }
        };
        docs.push(Document {
            id: docs.len() as u32,
            source_id: Some(id),
            tokens,
            label: rec.label,
            split: rec.split.unwrap_or_default(),
        });
    }
    Ok(Corpus::new(docs))
}

fn parse_tsv(text: &str) -> Result<Corpus> {
    let mut docs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (label, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: "expected `label<TAB>text`".into(),
        })?;
        docs.push(Document {
            id: docs.len() as u32,
            source_id: None,
            tokens: tokenize(body),
            label: Some(label.trim().to_string()).filter(|l| !l.is_empty()),
            split: Split::Train,
        });
    }
    Ok(Corpus::new(docs))
}

/// Inverse document frequencies `ln(N / df)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub num_docs: usize,
    pub entries: BTreeMap<String, f64>,
}

impl IdfTable {
    /// Computes idf over one token stream per document.
    pub fn from_streams<D, S>(streams: impl IntoIterator<Item = D>) -> Result<Self>
    where
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for stream in streams {
            n += 1;
            let uniq: BTreeSet<String> = stream.into_iter().map(|s| s.as_ref().to_owned()).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        if n == 0 {
            return Err(Error::invalid("idf needs at least one document"));
        }
        let nf = n as f64;
        let entries = df.into_iter().map(|(t, c)| (t, (nf / c as f64).ln())).collect();
        Ok(IdfTable { num_docs: n, entries })
    }

    /// Looks up a token; unknown tokens are an error, never a silent zero.
    pub fn get(&self, token: &str) -> Result<f64> {
        self.entries
            .get(token)
            .copied()
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Computes idf over per-document token streams aligned with `corpus`.
pub fn compute_idf<D, S>(corpus: &Corpus, streams: impl IntoIterator<Item = D>) -> Result<IdfTable>
where
    D: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let table = IdfTable::from_streams(streams)?;
    if table.num_docs != corpus.num_docs() {
        return Err(Error::DimensionMismatch {
            expected: corpus.num_docs(),
            found: table.num_docs,
        });
    }
    Ok(table)
}
