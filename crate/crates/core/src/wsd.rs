//! Word-sense induction over contextual occurrence vectors.
//!
//! Each surface word's occurrence vectors are clustered with spherical k-means.
//! The number of senses grows from one until two centroids become at least `tau`
//! cosine-similar (or a cluster gets too small); every occurrence is then tagged
//! with its nearest centroid, giving sense-tagged tokens `word#j`.

use std::collections::{BTreeMap, HashMap};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed_store::ContextualEmbeddingStore;
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize_in_place};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from_seed};

pub const MAX_KMEANS_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub centroids: Vec<Vec<T>>,
    /// Zero-based cluster index per input vector.
    pub assignments: Vec<usize>,
    /// Sum of cosines to the assigned centroid, recorded after every
    /// assignment step.
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> KMeansFit<T> {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Largest cosine between two distinct centroids; `None` for k = 1.
    pub fn max_centroid_cosine(&self) -> Option<T> {
        let k = self.centroids.len();
        let mut best: Option<T> = None;
        for i in 0..k {
            for j in i + 1..k {
                let c = dot(&self.centroids[i], &self.centroids[j]);
                best = Some(best.map_or(c, |b| b.max(c)));
            }
        }
        best
    }
}

/// Index of the max-cosine centroid for a unit vector; ties go to the lowest index.
fn nearest<T: Scalar>(x: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = 0;
    let mut best_sim = dot(x, &centroids[0]);
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let s = dot(x, c);
        if s > best_sim {
            best = j;
            best_sim = s;
        }
    }
    (best, best_sim)
}

fn normalized_inputs<T: Scalar, V: AsRef<[T]>>(vectors: &[V]) -> Result<Vec<Vec<T>>> {
    let dim = vectors.first().map_or(0, |v| v.as_ref().len());
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let mut u = v.to_vec();
            if !normalize_in_place(&mut u) {
                return Err(Error::ZeroVector(format!("occurrence {i}")));
            }
            Ok(u)
        })
        .collect()
}

fn plus_plus_seeds<T: Scalar>(xs: &[Vec<T>], k: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = rng_from_seed(seed);
    let n = xs.len();
    let mut chosen = vec![rng.random_range(0..n)];
    // 1 - cos equals half the squared chord length on the unit sphere
    let mut dist: Vec<f64> = xs
        .iter()
        .map(|x| (T::one() - dot(x, &xs[chosen[0]])).to_f64_lossy().max(0.0))
        .collect();
    while chosen.len() < k {
        let weights: Vec<f64> = dist.iter().map(|d| d * d).collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                acc += w;
                if acc > r && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a seed
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (d, x) in dist.iter_mut().zip(xs) {
            let nd = (T::one() - dot(x, &xs[next])).to_f64_lossy().max(0.0);
            if nd < *d {
                *d = nd;
            }
        }
    }
    chosen.into_iter().map(|i| xs[i].clone()).collect()
}

/// Lloyd iterations on the unit sphere with k-means++ seeding.
///
/// Inputs are normalized internally. Terminates when the assignment is stable
/// or after [`MAX_KMEANS_ITERS`] updates; the returned assignment is always the
/// max-cosine centroid for the returned centroids.
pub fn spherical_kmeans<T: Scalar, V: AsRef<[T]>>(vectors: &[V], k: usize, seed: u64) -> Result<KMeansFit<T>> {
    let n = vectors.len();
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > n {
        return Err(Error::invalid(format!("k = {k} exceeds the {n} input vectors")));
    }
    let xs = normalized_inputs(vectors)?;
    let dim = xs[0].len();
    let mut centroids = plus_plus_seeds(&xs, k, seed);

    let assign = |cs: &[Vec<T>]| -> (Vec<usize>, T) {
        let mut obj = T::zero();
        let a = xs
            .iter()
            .map(|x| {
                let (j, s) = nearest(x, cs);
                obj += s;
                j
            })
            .collect();
        (a, obj)
    };

    let (mut assignments, obj) = assign(&centroids);
    let mut trace = vec![obj];
    for _ in 0..MAX_KMEANS_ITERS {
        let mut sums = vec![vec![T::zero(); dim]; k];
        for (x, &a) in xs.iter().zip(&assignments) {
            for (s, &v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, mut s) in centroids.iter_mut().zip(sums) {
            // empty or fully cancelling clusters keep their previous centroid
            if normalize_in_place(&mut s) {
                *c = s;
            }
        }
        let (next, obj) = assign(&centroids);
        trace.push(obj);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SenseLimits {
    pub k_max: usize,
    pub min_occurrences: usize,
    pub min_cluster_size: usize,
}

impl Default for SenseLimits {
    fn default() -> Self {
        SenseLimits {
            k_max: 10,
            min_occurrences: 10,
            min_cluster_size: 5,
        }
    }
}

/// Chooses the number of senses for one word.
///
/// Tries k = 1, 2, ... and keeps the largest k whose centroids are pairwise
/// less than `tau` cosine-similar and whose clusters all have at least
/// `min_cluster_size` members. The first failing k ends the search.
pub fn select_sense_count<T: Scalar, V: AsRef<[T]>>(
    vectors: &[V],
    tau: f64,
    seed: u64,
    limits: &SenseLimits,
) -> Result<KMeansFit<T>> {
    if vectors.is_empty() {
        return Err(Error::invalid("a word needs at least one occurrence"));
    }
    let seed_for = |k: usize| derive_seed(seed, "kmeans", &k.to_string());
    let mut best = spherical_kmeans(vectors, 1, seed_for(1))?;
    if vectors.len() < limits.min_occurrences {
        return Ok(best);
    }
    let tau = T::lit(tau);
    for k in 2..=limits.k_max.min(vectors.len()) {
        let fit = spherical_kmeans(vectors, k, seed_for(k))?;
        let separated = fit.max_centroid_cosine().is_none_or(|c| c < tau);
        let populated = fit.cluster_sizes().iter().all(|&s| s >= limits.min_cluster_size);
        if !(separated && populated) {
            break;
        }
        best = fit;
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordSenses<T> {
    pub word: String,
    /// Unit-norm centroid per sense; sense `j` (1-based) is `centroids[j - 1]`.
    pub centroids: Vec<Vec<T>>,
    /// `(doc_id, token_index, sense)` in document order.
    pub tags: Vec<(u32, u32, u32)>,
}

impl<T> WordSenses<T> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sense_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.centroids.len()];
        for &(_, _, s) in &self.tags {
            c[s as usize - 1] += 1;
        }
        c
    }
}

pub fn sense_token(word: &str, sense: u32) -> String {
    format!("{word}#{sense}")
}

/// One entry of the sense-tagged vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SenseEntry<T> {
    pub token: String,
    pub word: String,
    pub sense: u32,
    pub vector: Vec<T>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SenseInventory<T> {
    tau: f64,
    words: Vec<WordSenses<T>>,
    word_index: HashMap<String, usize>,
    tag_index: HashMap<(u32, u32), (usize, u32)>,
}

impl<T: Scalar> SenseInventory<T> {
    pub fn from_words(tau: f64, mut words: Vec<WordSenses<T>>) -> Result<Self> {
        words.sort_by(|a, b| a.word.cmp(&b.word));
        let mut word_index = HashMap::with_capacity(words.len());
        let mut tag_index = HashMap::new();
        for (wi, w) in words.iter().enumerate() {
            if w.centroids.is_empty() {
                return Err(Error::invalid(format!("word {:?} has no senses", w.word)));
            }
            if word_index.insert(w.word.clone(), wi).is_some() {
                return Err(Error::invalid(format!("word {:?} listed twice", w.word)));
            }
            for &(d, t, s) in &w.tags {
                if s == 0 || s as usize > w.centroids.len() {
                    return Err(Error::invalid(format!("sense {s} out of range for {:?}", w.word)));
                }
                if tag_index.insert((d, t), (wi, s)).is_some() {
                    return Err(Error::DuplicateRecord { doc: d, tok: t });
                }
            }
        }
        Ok(SenseInventory {
            tau,
            words,
            word_index,
            tag_index,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn words(&self) -> &[WordSenses<T>] {
        &self.words
    }

    pub fn word(&self, w: &str) -> Option<&WordSenses<T>> {
        self.word_index.get(w).map(|&i| &self.words[i])
    }

    /// Sense tag `(word, sense)` of one occurrence.
    pub fn tag_at(&self, doc_id: u32, token_index: u32) -> Option<(&str, u32)> {
        self.tag_index
            .get(&(doc_id, token_index))
            .map(|&(wi, s)| (self.words[wi].word.as_str(), s))
    }

    pub fn num_tags(&self) -> usize {
        self.tag_index.len()
    }

    pub fn sense_vocabulary(&self) -> Vec<SenseEntry<T>> {
        let mut out = Vec::new();
        for w in &self.words {
            let counts = w.sense_counts();
            for (j, c) in w.centroids.iter().enumerate() {
                let sense = j as u32 + 1;
                out.push(SenseEntry {
                    token: sense_token(&w.word, sense),
                    word: w.word.clone(),
                    sense,
                    vector: c.clone(),
                    count: counts[j],
                });
            }
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for w in &self.words {
            let line = InventoryLine {
                w: w.word.clone(),
                k: w.k(),
                centroids: w
                    .centroids
                    .iter()
                    .map(|c| c.iter().map(|x| x.to_f32().unwrap_or(f32::NAN)).collect())
                    .collect(),
                tags: w.tags.iter().map(|&(d, t, s)| [d, t, s]).collect(),
            };
            out.push_str(&serde_json::to_string(&line).expect("inventory line serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the JSONL form; centroids are renormalized after the f32 round trip.
    pub fn from_jsonl(text: &str, tau: f64) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: InventoryLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if rec.k != rec.centroids.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("k = {} but {} centroids", rec.k, rec.centroids.len()),
                });
            }
            let centroids = rec
                .centroids
                .iter()
                .map(|c| {
                    let mut v: Vec<T> = c.iter().map(|&x| T::lit(x as f64)).collect();
                    if !normalize_in_place(&mut v) {
                        return Err(Error::ZeroVector(format!("centroid of {:?}", rec.w)));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            words.push(WordSenses {
                word: rec.w,
                centroids,
                tags: rec.tags.into_iter().map(|[d, t, s]| (d, t, s)).collect(),
            });
        }
        Self::from_words(tau, words)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct InventoryLine {
    w: String,
    k: usize,
    centroids: Vec<Vec<f32>>,
    tags: Vec<[u32; 3]>,
}

/// Tags every stored occurrence with its max-cosine centroid (ties to the
/// lowest sense id).
pub fn assign_senses<T: Scalar>(
    store: &ContextualEmbeddingStore,
    centroids: &BTreeMap<String, Vec<Vec<T>>>,
    tau: f64,
) -> Result<SenseInventory<T>> {
    let words = centroids
        .par_iter()
        .map(|(word, cs)| {
            let tags = store
                .occurrences_of(word)
                .iter()
                .map(|o| {
                    let x: Vec<T> = o.vector.iter().map(|&v| T::lit(v as f64)).collect();
                    if x.iter().all(|v| *v == T::zero()) {
                        return Err(Error::ZeroVector(format!(
                            "doc {} token {} ({word:?})",
                            o.doc_id, o.token_index
                        )));
                    }
                    let (j, _) = nearest(&x, cs);
                    Ok((o.doc_id, o.token_index, j as u32 + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(WordSenses {
                word: word.clone(),
                centroids: cs.clone(),
                tags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SenseInventory::from_words(tau, words)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WsdConfig {
    pub tau: f64,
    pub limits: SenseLimits,
    pub seed: u64,
    /// Forces one sense per word (the weight-averaged ablation).
    pub single_sense: bool,
}

impl Default for WsdConfig {
    fn default() -> Self {
        WsdConfig {
            tau: 0.8,
            limits: SenseLimits::default(),
            seed: 0,
            single_sense: false,
        }
    }
}

/// Induces senses for every word in the store and tags all occurrences.
///
/// Per-word work is independent and seeded from `(seed, word)`, so the result
/// does not depend on the number of worker threads.
pub fn induce_senses<T: Scalar>(store: &ContextualEmbeddingStore, cfg: &WsdConfig) -> Result<SenseInventory<T>> {
    if !(cfg.tau > 0.0 && cfg.tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {}", cfg.tau)));
    }
    let words: Vec<&str> = store.words().collect();
    let fits = words
        .par_iter()
        .map(|&w| {
            let occ = store.occurrences_of(w);
            let vectors: Vec<Vec<T>> = occ
                .iter()
                .map(|o| o.vector.iter().map(|&v| T::lit(v as f64)).collect())
                .collect();
            let seed = derive_seed(cfg.seed, "wsd", w);
            let fit = if cfg.single_sense {
                spherical_kmeans(&vectors, 1, seed)
            } else {
                select_sense_count(&vectors, cfg.tau, seed, &cfg.limits)
            }
            .map_err(|e| match e {
                Error::ZeroVector(at) => Error::ZeroVector(format!("{at} of word {w:?}")),
                other => other,
            })?;
            Ok((w.to_string(), fit.centroids))
        })
        .collect::<Result<Vec<_>>>()?;
    let centroids: BTreeMap<String, Vec<Vec<T>>> = fits.into_iter().collect();
    assign_senses(store, &centroids, cfg.tau)
}

/// Fraction of the surface vocabulary per sense count.
pub fn polysemy_distribution<T: Scalar>(inventory: &SenseInventory<T>) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for w in inventory.words() {
        *counts.entry(w.k()).or_default() += 1;
    }
    let total = inventory.words().len() as f64;
    counts.into_iter().map(|(k, c)| (k, c as f64 / total)).collect()
}

/// `polysemy_distribution` bucketed as k = 1, k = 2, k >= 3.
pub fn polysemy_buckets(dist: &BTreeMap<usize, f64>) -> [f64; 3] {
    let mut b = [0.0; 3];
    for (&k, &f) in dist {
        b[k.clamp(1, 3) - 1] += f;
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::{Distribution, Normal};

    fn unit(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        normalize_in_place(&mut v);
        v
    }

    /// Direction `a` rotated toward the orthogonal direction `b` so that the
    /// cosine with `a` equals `cos`.
    fn at_cosine(a: &[f64], b: &[f64], cos: f64) -> Vec<f64> {
        let s = (1.0 - cos * cos).sqrt();
        a.iter().zip(b).map(|(x, y)| cos * x + s * y).collect()
    }

    fn noisy_group(center: &[f64], n: usize, sigma: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rng_from_seed(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        (0..n)
            .map(|_| {
                let v: Vec<f64> = center.iter().map(|c| c + normal.sample(&mut rng)).collect();
                unit(&v)
            })
            .collect()
    }

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identical_vectors_single_cluster() {
        let v = vec![vec![0.6f64, 0.8, 0.0]; 10];
        let fit = spherical_kmeans(&v, 1, 3).unwrap();
        assert!(fit.assignments.iter().all(|&a| a == 0));
        for (c, w) in fit.centroids[0].iter().zip([0.6, 0.8, 0.0]) {
            assert!((c - w).abs() < 1e-12);
        }
        let one = spherical_kmeans(&[vec![3.0f64, 4.0]], 1, 0).unwrap();
        assert!((one.centroids[0][0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn kmeans_errors() {
        let v = vec![vec![1.0, 0.0]; 3];
        assert!(spherical_kmeans(&v, 4, 0).is_err());
        let z = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(spherical_kmeans(&z, 1, 0), Err(Error::ZeroVector(_))));
    }

    /// Best 2-partition by exhaustive enumeration: maximizes the sum of cosines
    /// to the renormalized group means.
    fn best_bipartition(xs: &[Vec<f64>]) -> Vec<usize> {
        let n = xs.len();
        let score = |mask: u32| -> f64 {
            let mut total = 0.0;
            for g in 0..2 {
                let members: Vec<&Vec<f64>> = (0..n)
                    .filter(|&i| ((mask >> i) & 1) as usize == g)
                    .map(|i| &xs[i])
                    .collect();
                if members.is_empty() {
                    return f64::NEG_INFINITY;
                }
                let mut m = vec![0.0; xs[0].len()];
                for x in &members {
                    axpy_f(x, &mut m);
                }
                let nm = crate::linalg::norm(&m);
                total += nm; // sum of cosines to the normalized mean equals |sum|
            }
            total
        };
        let best = (1..(1u32 << (n - 1)))
            .max_by(|&a, &b| score(a).partial_cmp(&score(b)).unwrap())
            .unwrap();
        (0..n).map(|i| ((best >> i) & 1) as usize).collect()
    }

    fn axpy_f(x: &[f64], y: &mut [f64]) {
        for (a, b) in y.iter_mut().zip(x) {
            *a += b;
        }
    }

    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        a.iter().zip(b).all(|(x, y)| (a[0] == *x) == (b[0] == *y))
    }

    #[test]
    fn two_orthogonal_groups_match_exhaustive_oracle() {
        let d = 6;
        let mut xs = noisy_group(&basis(d, 0), 5, 0.05, 1);
        xs.extend(noisy_group(&basis(d, 3), 6, 0.05, 2));
        let oracle = best_bipartition(&xs);
        for seed in 0..5 {
            let fit = spherical_kmeans(&xs, 2, seed).unwrap();
            assert!(same_partition(&fit.assignments, &oracle));
            for g in 0..2 {
                let mut m = vec![0.0; d];
                for (x, &a) in xs.iter().zip(&fit.assignments) {
                    if a == g {
                        axpy_f(x, &mut m);
                    }
                }
                normalize_in_place(&mut m);
                for (c, w) in fit.centroids[g].iter().zip(&m) {
                    assert!((c - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn objective_is_monotone_and_assignment_is_final() {
        let mut rng = rng_from_seed(11);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for trial in 0..20 {
            let xs: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..5).map(|_| normal.sample(&mut rng)).collect())
                .collect();
            let fit = spherical_kmeans(&xs, 1 + trial % 6, trial as u64).unwrap();
            for w in fit.objective_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "objective decreased: {w:?}");
            }
            for (x, &a) in xs.iter().zip(&fit.assignments) {
                let (j, _) = nearest(&unit(x), &fit.centroids);
                assert_eq!(j, a);
            }
            for c in &fit.centroids {
                assert!((crate::linalg::norm(c) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn contrast_pairs_split_into_two_senses() {
        // context pairs at cosine 0.71, 0.67 and 0.78 sit below tau = 0.8
        let d = 16;
        for (i, cos) in [0.71, 0.67, 0.78].into_iter().enumerate() {
            let a = basis(d, 0);
            let b = at_cosine(&a, &basis(d, 1), cos);
            let mut xs = noisy_group(&a, 6, 0.01, 10 + i as u64);
            xs.extend(noisy_group(&b, 6, 0.01, 20 + i as u64));
            let fit = select_sense_count(&xs, 0.8, 5, &SenseLimits::default()).unwrap();
            assert_eq!(fit.centroids.len(), 2, "cos = {cos}");
            assert!(fit.max_centroid_cosine().unwrap() < 0.8);
        }
        // contexts more similar than tau stay one sense
        let a = basis(d, 0);
        let b = at_cosine(&a, &basis(d, 1), 0.9);
        let mut xs = noisy_group(&a, 6, 0.01, 1);
        xs.extend(noisy_group(&b, 6, 0.01, 2));
        let fit = select_sense_count(&xs, 0.8, 5, &SenseLimits::default()).unwrap();
        assert_eq!(fit.centroids.len(), 1);
    }

    #[test]
    fn identical_occurrences_have_one_sense() {
        let xs = vec![vec![1.0, 2.0, 3.0]; 30];
        let fit = select_sense_count(&xs, 0.8, 0, &SenseLimits::default()).unwrap();
        assert_eq!(fit.centroids.len(), 1);
    }

    #[test]
    fn three_planted_groups_give_three_senses() {
        let d = 8;
        let mut xs = Vec::new();
        for g in 0..3 {
            xs.extend(noisy_group(&basis(d, g * 2), 7, 0.03, g as u64));
        }
        let limits = SenseLimits::default();
        let fit = select_sense_count(&xs, 0.8, 9, &limits).unwrap();
        assert_eq!(fit.centroids.len(), 3);
        assert!(fit.max_centroid_cosine().unwrap() < 0.8);
        // oracle check on k = 4: every 4-clustering must break a condition
        let four = spherical_kmeans(&xs, 4, derive_seed(9, "kmeans", "4")).unwrap();
        let sep = four.max_centroid_cosine().unwrap() < 0.8;
        let pop = four.cluster_sizes().iter().all(|&s| s >= limits.min_cluster_size);
        assert!(!(sep && pop));
    }

    #[test]
    fn rare_words_keep_one_sense() {
        let mut xs = noisy_group(&basis(4, 0), 4, 0.01, 0);
        xs.extend(noisy_group(&basis(4, 1), 4, 0.01, 1));
        let fit = select_sense_count(&xs, 0.8, 0, &SenseLimits::default()).unwrap();
        assert_eq!(fit.centroids.len(), 1);
    }

    fn store_from(groups: &[(&str, Vec<Vec<f64>>)]) -> ContextualEmbeddingStore {
        let dim = groups[0].1[0].len();
        let mut s = ContextualEmbeddingStore::new(dim);
        let mut doc = 0;
        for (w, vs) in groups {
            for v in vs {
                let f: Vec<f32> = v.iter().map(|&x| x as f32).collect();
                s.push(doc, 0, *w, &f).unwrap();
                doc += 1;
            }
        }
        s
    }

    #[test]
    fn assign_exact_match_and_tie_break() {
        let mut s = ContextualEmbeddingStore::new(2);
        s.push(0, 0, "w", &[0.0, 1.0]).unwrap();
        s.push(1, 0, "w", &[1.0, 1.0]).unwrap();
        let mut cs = BTreeMap::new();
        cs.insert("w".to_string(), vec![vec![1.0f64, 0.0], vec![0.0, 1.0]]);
        let inv = assign_senses(&s, &cs, 0.8).unwrap();
        assert_eq!(inv.tag_at(0, 0), Some(("w", 2)));
        assert_eq!(inv.tag_at(1, 0), Some(("w", 1)));
    }

    #[test]
    fn assignment_matches_linear_scan_oracle() {
        let mut rng = rng_from_seed(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut s = ContextualEmbeddingStore::new(6);
        for i in 0..200u32 {
            let v: Vec<f32> = (0..6).map(|_| normal.sample(&mut rng) as f32).collect();
            s.push(i, 0, "w", &v).unwrap();
        }
        let cs: Vec<Vec<f64>> = (0..4)
            .map(|_| unit(&(0..6).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>()))
            .collect();
        let mut map = BTreeMap::new();
        map.insert("w".to_string(), cs.clone());
        let inv = assign_senses(&s, &map, 0.8).unwrap();
        for o in s.occurrences_of("w") {
            let x: Vec<f64> = o.vector.iter().map(|&v| v as f64).collect();
            let nx = crate::linalg::norm(&x);
            let mut best = 0;
            let mut best_cos = f64::NEG_INFINITY;
            for (j, c) in cs.iter().enumerate() {
                let cos = dot(&x, c) / nx;
                if cos > best_cos {
                    best_cos = cos;
                    best = j;
                }
            }
            assert_eq!(inv.tag_at(o.doc_id, 0), Some(("w", best as u32 + 1)));
        }
    }

    #[test]
    fn induced_inventory_invariants_and_fixed_point() {
        let d = 8;
        let mut amb = noisy_group(&basis(d, 0), 12, 0.05, 1);
        amb.extend(noisy_group(&basis(d, 1), 12, 0.05, 2));
        let plain = noisy_group(&basis(d, 2), 15, 0.05, 3);
        let store = store_from(&[("bank", amb), ("river", plain)]);
        let cfg = WsdConfig::default();
        let inv: SenseInventory<f64> = induce_senses(&store, &cfg).unwrap();
        assert_eq!(inv.word("bank").unwrap().k(), 2);
        assert_eq!(inv.word("river").unwrap().k(), 1);
        assert_eq!(inv.num_tags(), store.len());
        for w in inv.words() {
            for c in &w.centroids {
                assert!((crate::linalg::norm(c) - 1.0).abs() < 1e-9);
            }
            for i in 0..w.k() {
                for j in i + 1..w.k() {
                    assert!(dot(&w.centroids[i], &w.centroids[j]) < cfg.tau);
                }
            }
        }
        // re-assigning on the final centroids changes nothing
        let cs: BTreeMap<String, Vec<Vec<f64>>> = inv
            .words()
            .iter()
            .map(|w| (w.word.clone(), w.centroids.clone()))
            .collect();
        let again = assign_senses(&store, &cs, cfg.tau).unwrap();
        assert_eq!(again, inv);
        // determinism
        let twice: SenseInventory<f64> = induce_senses(&store, &cfg).unwrap();
        assert_eq!(twice, inv);

        let dist = polysemy_distribution(&inv);
        assert_eq!(dist.get(&1), Some(&0.5));
        assert_eq!(dist.get(&2), Some(&0.5));

        let vocab = inv.sense_vocabulary();
        let tokens: Vec<&str> = vocab.iter().map(|e| e.token.as_str()).collect();
        assert_eq!(tokens, ["bank#1", "bank#2", "river#1"]);
        assert_eq!(vocab.iter().map(|e| e.count).sum::<usize>(), 39);
    }

    #[test]
    fn single_sense_mode_uses_mean_direction() {
        let d = 4;
        let mut amb = noisy_group(&basis(d, 0), 12, 0.05, 1);
        amb.extend(noisy_group(&basis(d, 1), 12, 0.05, 2));
        let store = store_from(&[("bank", amb.clone())]);
        let cfg = WsdConfig {
            single_sense: true,
            ..WsdConfig::default()
        };
        let inv: SenseInventory<f64> = induce_senses(&store, &cfg).unwrap();
        let w = inv.word("bank").unwrap();
        assert_eq!(w.k(), 1);
        let mut mean = vec![0.0; d];
        for o in store.occurrences_of("bank") {
            let mut x: Vec<f64> = o.vector.iter().map(|&v| v as f64).collect();
            normalize_in_place(&mut x);
            axpy_f(&x, &mut mean);
        }
        normalize_in_place(&mut mean);
        for (a, b) in w.centroids[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(polysemy_distribution(&inv).get(&1), Some(&1.0));
    }

    #[test]
    fn polysemy_fractions() {
        let w = |name: &str, k: usize| WordSenses {
            word: name.to_string(),
            centroids: vec![vec![1.0f64]; k],
            tags: vec![],
        };
        let inv = SenseInventory::from_words(0.8, vec![w("a", 1), w("b", 1), w("c", 2)]).unwrap();
        let dist = polysemy_distribution(&inv);
        assert!((dist[&1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((dist[&2] - 1.0 / 3.0).abs() < 1e-12);
        assert!((dist.values().sum::<f64>() - 1.0).abs() < 1e-9);
        let b = polysemy_buckets(&dist);
        assert!((b[0] - 2.0 / 3.0).abs() < 1e-12 && b[2] == 0.0);
    }

    #[test]
    fn jsonl_roundtrip() {
        let inv = SenseInventory::from_words(
            0.8,
            vec![WordSenses {
                word: "bank".into(),
                centroids: vec![unit(&[1.0, 2.0]), unit(&[-2.0, 1.0])],
                tags: vec![(0, 1, 1), (3, 0, 2)],
            }],
        )
        .unwrap();
        let text = inv.to_jsonl();
        assert!(text.starts_with("{\"w\":\"bank\",\"k\":2,\"centroids\":[["));
        let back: SenseInventory<f64> = SenseInventory::from_jsonl(&text, 0.8).unwrap();
        assert_eq!(back.tag_at(3, 0), Some(("bank", 2)));
        for (a, b) in back.words()[0].centroids[0].iter().zip(&inv.words()[0].centroids[0]) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!((crate::linalg::norm(&back.words()[0].centroids[1]) - 1.0).abs() < 1e-12);
    }
}
