//! Planted-structure corpora and embedding stores for end-to-end checks
//! without a transformer.
//!
//! Every word owns unit direction vectors (one per planted sense, mutually
//! orthogonal); an occurrence vector is its direction plus isotropic Gaussian
//! noise, renormalized. Ambiguous words take the sense `class % senses` of the
//! document they occur in, and class-specific words make classes separable.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Split};
use crate::embed_store::ContextualEmbeddingStore;
use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedSpec {
    pub num_classes: usize,
    pub docs_per_class: usize,
    /// Unambiguous words; half are shared by all classes, the rest are dealt
    /// to classes round-robin.
    pub vocab_size: usize,
    pub ambiguous_word_count: usize,
    pub senses_per_ambiguous_word: usize,
    pub dim: usize,
    pub noise: f64,
    pub doc_len: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            num_classes: 2,
            docs_per_class: 200,
            vocab_size: 60,
            ambiguous_word_count: 20,
            senses_per_ambiguous_word: 2,
            dim: 32,
            noise: 0.05,
            doc_len: 30,
            test_fraction: 0.3,
            seed: 7,
        }
    }
}

impl PlantedSpec {
    /// Expected cosine between a noisy occurrence and its direction.
    pub fn expected_within_sense_cosine(&self) -> f64 {
        1.0 / (1.0 + self.dim as f64 * self.noise * self.noise).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.docs_per_class == 0 || self.doc_len == 0 {
            return Err(Error::Config(
                "classes, documents and document length must be positive".into(),
            ));
        }
        if self.ambiguous_word_count > 0 && self.senses_per_ambiguous_word > self.num_classes {
            return Err(Error::Config(format!(
                "{} senses per word cannot be planted with {} classes",
                self.senses_per_ambiguous_word, self.num_classes
            )));
        }
        if self.ambiguous_word_count > 0 && self.senses_per_ambiguous_word == 0 {
            return Err(Error::Config("ambiguous words need at least one sense".into()));
        }
        if self.senses_per_ambiguous_word > self.dim {
            return Err(Error::Config("more senses than dimensions".into()));
        }
        if self.vocab_size < 2 * self.num_classes {
            return Err(Error::Config("vocab_size must give every class a specific word".into()));
        }
        if !(self.noise >= 0.0) || self.expected_within_sense_cosine() < 0.9 {
            return Err(Error::Config(format!(
                "noise {} gives expected within-sense cosine {:.3} < 0.9",
                self.noise,
                self.expected_within_sense_cosine()
            )));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Generator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    /// Unit sense directions per word (a single one for unambiguous words).
    pub directions: BTreeMap<String, Vec<Vec<f32>>>,
    /// 1-based planted sense per `(doc, token)` occurrence of every word.
    pub senses: BTreeMap<(u32, u32), u32>,
    pub ambiguous_words: Vec<String>,
}

impl PlantedTruth {
    /// Planted senses of one word's occurrences in `(doc, token)` order.
    pub fn word_senses(&self, store: &ContextualEmbeddingStore, word: &str) -> Vec<u32> {
        store
            .occurrences_of(word)
            .iter()
            .map(|o| self.senses[&(o.doc_id, o.token_index)])
            .collect()
    }
}

fn gaussian(rng: &mut Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// `count` orthonormal random vectors by Gram-Schmidt.
fn orthonormal(rng: &mut Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v = gaussian(rng, dim);
        for b in &out {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            out.push(unit(v));
        }
    }
    out
}

pub fn ambiguous_word(i: usize) -> String {
    format!("amb{i}")
}

pub fn plain_word(i: usize) -> String {
    format!("w{i}")
}

pub fn class_label(c: usize) -> String {
    format!("class{c}")
}

/// Builds the corpus, a matching store and the planted sense tags.
pub fn generate(spec: &PlantedSpec) -> Result<(Corpus, ContextualEmbeddingStore, PlantedTruth)> {
    spec.validate()?;
    let mut dir_rng = rng_from_seed(derive_seed(spec.seed, "synthetic", "directions"));
    let mut directions: BTreeMap<String, Vec<Vec<f32>>> = BTreeMap::new();
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    let ambiguous: Vec<String> = (0..spec.ambiguous_word_count).map(ambiguous_word).collect();
    for w in &ambiguous {
        let dirs = orthonormal(&mut dir_rng, spec.dim, spec.senses_per_ambiguous_word);
        directions.insert(w.clone(), dirs.into_iter().map(to_f32).collect());
    }
    let shared = spec.vocab_size / 2;
    let mut class_words: Vec<Vec<String>> = vec![Vec::new(); spec.num_classes];
    let mut shared_words = Vec::new();
    for i in 0..spec.vocab_size {
        let w = plain_word(i);
        directions.insert(w.clone(), vec![to_f32(unit(gaussian(&mut dir_rng, spec.dim)))]);
        if i < shared {
            shared_words.push(w);
        } else {
            class_words[(i - shared) % spec.num_classes].push(w);
        }
    }

    let mut doc_rng = rng_from_seed(derive_seed(spec.seed, "synthetic", "documents"));
    let mut noise_rng = rng_from_seed(derive_seed(spec.seed, "synthetic", "noise"));
    let n_docs = spec.num_classes * spec.docs_per_class;
    let mut test_docs = vec![false; n_docs];
    let n_test = (spec.docs_per_class as f64 * spec.test_fraction).round() as usize;
    for c in 0..spec.num_classes {
        let mut ids: Vec<usize> = (0..spec.docs_per_class).map(|j| j * spec.num_classes + c).collect();
        ids.shuffle(&mut doc_rng);
        for &i in &ids[..n_test] {
            test_docs[i] = true;
        }
    }

    let mut docs = Vec::with_capacity(n_docs);
    let mut store = ContextualEmbeddingStore::new(spec.dim);
    let mut senses = BTreeMap::new();
    for (i, &is_test) in test_docs.iter().enumerate() {
        let class = i % spec.num_classes;
        let mut tokens = Vec::with_capacity(spec.doc_len);
        for t in 0..spec.doc_len {
            let pool = doc_rng.random_range(0..3);
            let (word, sense) = match pool {
                0 if !ambiguous.is_empty() => {
                    let w = ambiguous.choose(&mut doc_rng).expect("nonempty");
                    (w.clone(), class % spec.senses_per_ambiguous_word)
                }
                2 if !shared_words.is_empty() => (shared_words.choose(&mut doc_rng).expect("nonempty").clone(), 0),
                _ => (class_words[class].choose(&mut doc_rng).expect("nonempty").clone(), 0),
            };
            let dir = &directions[&word][sense];
            let vector: Vec<f32> = if spec.noise == 0.0 {
                dir.clone()
            } else {
                let noisy: Vec<f64> = dir
                    .iter()
                    .map(|&x| x as f64 + spec.noise * noise_rng.sample::<f64, _>(StandardNormal))
                    .collect();
                to_f32(unit(noisy))
            };
            store.push(i as u32, t as u32, word.as_str(), &vector)?;
            senses.insert((i as u32, t as u32), sense as u32 + 1);
            tokens.push(word);
        }
        docs.push(Document {
            id: i as u32,
            source_id: Some(i as u64),
            tokens,
            label: Some(class_label(class)),
            split: if is_test { Split::Test } else { Split::Train },
        });
    }
    let truth = PlantedTruth {
        directions,
        senses,
        ambiguous_words: ambiguous,
    };
    Ok((Corpus::new(docs), store, truth))
}

/// Two contexts of one word and the cosine between its embeddings there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContextPair<'a> {
    pub word: &'a str,
    pub first: &'a str,
    pub second: &'a str,
    pub cosine: f64,
}

/// A corpus of `copies` repetitions of every context sentence, one document
/// each, with a store where `word` points along direction `a` in its first
/// sentence and along `b` (with `cos(a, b) = cosine`) in its second. Other
/// words get one direction each. Every vector carries `noise` and is then
/// renormalized.
pub fn context_pair_fixture(
    pairs: &[ContextPair<'_>],
    copies: usize,
    dim: usize,
    noise: f64,
    seed: u64,
) -> Result<(Corpus, ContextualEmbeddingStore)> {
    if dim < 2 || copies == 0 {
        return Err(Error::Config("fixture needs dim >= 2 and copies >= 1".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "synthetic", "context-pairs"));
    let mut plain: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut targets: BTreeMap<(usize, u8), Vec<f64>> = BTreeMap::new();
    for (i, p) in pairs.iter().enumerate() {
        if !(-1.0..=1.0).contains(&p.cosine) {
            return Err(Error::Config(format!("cosine {} outside [-1, 1]", p.cosine)));
        }
        let basis = orthonormal(&mut rng, dim, 2);
        let sin = (1.0 - p.cosine * p.cosine).sqrt();
        let b: Vec<f64> = basis[0]
            .iter()
            .zip(&basis[1])
            .map(|(x, y)| p.cosine * x + sin * y)
            .collect();
        targets.insert((i, 0), basis[0].clone());
        targets.insert((i, 1), b);
    }
    let mut docs = Vec::new();
    let mut store = ContextualEmbeddingStore::new(dim);
    for _ in 0..copies {
        for (i, p) in pairs.iter().enumerate() {
            for (side, sentence) in [(0u8, p.first), (1u8, p.second)] {
                let doc_id = docs.len() as u32;
                let tokens = crate::corpus::tokenize(sentence);
                for (t, tok) in tokens.iter().enumerate() {
                    let dir = if tok == p.word {
                        targets[&(i, side)].clone()
                    } else {
                        plain
                            .entry(tok.clone())
                            .or_insert_with(|| unit(gaussian(&mut rng, dim)))
                            .clone()
                    };
                    let v: Vec<f64> = dir
                        .iter()
                        .map(|&x| x + noise * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    let v: Vec<f32> = unit(v).into_iter().map(|x| x as f32).collect();
                    store.push(doc_id, t as u32, tok.as_str(), &v)?;
                }
                docs.push(Document {
                    id: doc_id,
                    source_id: Some(doc_id as u64),
                    tokens,
                    label: None,
                    split: Split::Train,
                });
            }
        }
    }
    Ok((Corpus::new(docs), store))
}

/// Three words seen in two contexts each, with the cosine between their
/// contextual embeddings across the two.
pub const CONTRAST_PAIRS: [ContextPair<'static>; 3] = [
    ContextPair {
        word: "subject",
        first: "The math subject is difficult",
        second: "He sent the mail without subject",
        cosine: 0.71,
    },
    ContextPair {
        word: "apple",
        first: "The stocks of Apple have increased",
        second: "I eat an apple everyday",
        cosine: 0.67,
    },
    ContextPair {
        word: "unit",
        first: "Metre is unit of Distance",
        second: "He is in 1st unit",
        cosine: 0.78,
    },
];

/// Adjusted Rand index between two labelings of the same items. Two single-
/// cluster labelings (zero expected-index denominator) score 1.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let choose2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut joint: BTreeMap<(&A, &B), usize> = BTreeMap::new();
    let mut ra: BTreeMap<&A, usize> = BTreeMap::new();
    let mut rb: BTreeMap<&B, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len());
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
