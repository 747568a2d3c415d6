//! End-to-end orchestration: configuration, staged artifacts in a work
//! directory, and the evaluation runs on top.
//!
//! Every stage reads its inputs from the work directory and writes its output
//! there together with a `<file>.meta.json` sidecar holding the config hash, so
//! a staged run and a one-shot run produce the same bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anisotropy::{fit_transform, mean_pairwise_cosine, AnisotropyTransform, EXHAUSTIVE_PAIR_LIMIT};
use crate::corpus::{load_corpus, parse_corpus, Corpus, CorpusFormat, IdfTable};
use crate::docvec::{
    build_document_vector, build_word_topic_vector, sparsify, Averaging, DocumentVectorSet, WordTopicTable,
};
use crate::embed_store::{read_store, EmbedFormat};
use crate::error::{Error, Result};
use crate::eval::classify::LIMITED_FRACTIONS;
use crate::eval::fewshot::{few_shot_curve, SHOT_COUNTS};
use crate::eval::{
    concept_match, evaluate_classification, sts_eval, ClassifyConfig, ConceptPair, Curve, Distance, EvalRun,
    FewShotConfig, LinearConfig, StsPair, Table, DEFAULT_C_GRID,
};
use crate::seed::{derive_seed, short_hash};
use crate::soft_cluster::{fit_gmm, GmmConfig, GmmModel};
use crate::wsd::{
    induce_senses, polysemy_buckets, polysemy_distribution, sense_token, SenseInventory, SenseLimits, WsdConfig,
};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SENSES_FILE: &str = "senses.jsonl";
pub const POLYSEMY_FILE: &str = "polysemy.json";
pub const ANISO_FILE: &str = "aniso.bin";
pub const ANISO_REPORT_FILE: &str = "anisotropy.json";
pub const GMM_FILE: &str = "gmm.bin";
pub const GMM_REPORT_FILE: &str = "gmm.json";
pub const DOCVEC_FILE: &str = "docvecs.dvb";
pub const DOC_ANISO_FILE: &str = "docvec_aniso.bin";
pub const RESULTS_DIR: &str = "results";

/// Words measured by the anisotropy report, by descending frequency.
pub const ANISO_REPORT_WORDS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Contextual sense induction.
    #[default]
    Ctxd,
    /// One sense per word.
    WeightAvg,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctxd" => Ok(Mode::Ctxd),
            "weight_avg" | "weight-avg" => Ok(Mode::WeightAvg),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdfDomain {
    #[default]
    Sense,
    Surface,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnisotropyTarget {
    #[default]
    Words,
    Documents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum OffTag {
    #[serde(rename = "off")]
    Off,
}

/// Number of principal directions to remove, or `"off"` for no centering
/// and no removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnisotropyK {
    Count(usize),
    #[serde(with = "off_tag")]
    Off,
}

mod off_tag {
    use super::OffTag;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        OffTag::Off.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        OffTag::deserialize(d).map(|_| ())
    }
}

impl Default for AnisotropyK {
    fn default() -> Self {
        AnisotropyK::Count(6)
    }
}

impl FromStr for AnisotropyK {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("off") {
            return Ok(AnisotropyK::Off);
        }
        s.parse()
            .map(AnisotropyK::Count)
            .map_err(|_| Error::Config(format!("anisotropy k must be a count or \"off\", got {s:?}")))
    }
}

impl fmt::Display for AnisotropyK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnisotropyK::Count(k) => write!(f, "{k}"),
            AnisotropyK::Off => f.write_str("off"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Training fractions for classification; 1.0 is the full-data run.
    pub fractions: Vec<f64>,
    pub full_repeats: usize,
    pub limited_repeats: usize,
    pub c_grid: Vec<f64>,
    pub linear: LinearConfig,
    pub shots: Vec<usize>,
    pub fewshot_repeats: usize,
    pub distance: Distance,
    /// JSONL of `{"concept", "project", "match"}` referencing corpus ids.
    pub concept_pairs: Option<PathBuf>,
    /// JSONL of `{"year", "a", "b", "gold"}` referencing corpus ids.
    pub sts_pairs: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        let mut fractions = LIMITED_FRACTIONS.to_vec();
        fractions.push(1.0);
        EvalSettings {
            fractions,
            full_repeats: 5,
            limited_repeats: 10,
            c_grid: DEFAULT_C_GRID.to_vec(),
            linear: LinearConfig::default(),
            shots: SHOT_COUNTS.to_vec(),
            fewshot_repeats: 5,
            distance: Distance::Cosine,
            concept_pairs: None,
            sts_pairs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset name used in reports and for the component presets.
    pub dataset: String,
    pub corpus: Option<PathBuf>,
    pub corpus_format: CorpusFormat,
    pub store: Option<PathBuf>,
    pub embed_format: EmbedFormat,
    pub work_dir: PathBuf,
    pub seed: u64,
    pub tau: f64,
    /// GMM component count; falls back to the dataset preset.
    pub components: Option<usize>,
    pub anisotropy_k: AnisotropyK,
    pub anisotropy_target: AnisotropyTarget,
    pub mode: Mode,
    pub sparsify_p: Option<f64>,
    pub gmm: GmmConfig,
    pub limits: SenseLimits,
    pub averaging: Averaging,
    pub idf: IdfDomain,
    pub eval: EvalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: String::new(),
            corpus: None,
            corpus_format: CorpusFormat::Jsonl,
            store: None,
            embed_format: EmbedFormat::Ceb1,
            work_dir: PathBuf::from("work"),
            seed: 0,
            tau: 0.8,
            components: None,
            anisotropy_k: AnisotropyK::default(),
            anisotropy_target: AnisotropyTarget::Words,
            mode: Mode::Ctxd,
            sparsify_p: None,
            gmm: GmmConfig::default(),
            limits: SenseLimits::default(),
            averaging: Averaging::Occurrence,
            idf: IdfDomain::Sense,
            eval: EvalSettings::default(),
        }
    }
}

/// GMM component presets per dataset and training percentage (10..50, 100).
/// Few-shot runs use the 10% column.
pub fn preset_components(dataset: &str, fraction: f64) -> Option<usize> {
    let row: [usize; 6] = match dataset.to_ascii_lowercase().as_str() {
        "20ng" => [45, 45, 60, 60, 60, 60],
        "amazon" => [30; 6],
        "twitter" => [30, 45, 45, 45, 45, 45],
        "bbcsport" => [60, 60, 75, 75, 75, 90],
        "classic" => [30; 6],
        "recipe-l" | "recipe_l" | "recipel" => [30; 6],
        _ => return None,
    };
    let col = match (fraction * 10.0).round() as i64 {
        1 => 0,
        2 => 1,
        3 => 2,
        4 => 3,
        5 => 4,
        10 => 5,
        _ => return None,
    };
    Some(row[col])
}

/// The settings that shape embeddings and document vectors; this is what
/// the config hash covers.
#[derive(Serialize)]
struct EmbeddingKey<'a> {
    tau: f64,
    components: usize,
    anisotropy_k: AnisotropyK,
    anisotropy_target: AnisotropyTarget,
    mode: Mode,
    sparsify_p: Option<f64>,
    gmm: &'a GmmConfig,
    limits: &'a SenseLimits,
    averaging: Averaging,
    idf: IdfDomain,
    seed: u64,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_components(&self) -> Result<usize> {
        match self.components {
            Some(0) => Err(Error::Config("components must be at least 1".into())),
            Some(k) => Ok(k),
            None => preset_components(&self.dataset, 1.0).ok_or_else(|| {
                Error::Config(format!(
                    "no component count given and no preset for dataset {:?}",
                    self.dataset
                ))
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        self.resolved_components()?;
        if let Some(p) = self.sparsify_p {
            if !(0.0..100.0).contains(&p) {
                return Err(Error::Config(format!("sparsify_p must lie in [0, 100), got {p}")));
            }
        }
        if self.gmm.eps < 0.0 || self.gmm.tol < 0.0 || self.gmm.max_iters == 0 {
            return Err(Error::Config("gmm needs eps >= 0, tol >= 0 and max_iters >= 1".into()));
        }
        if self.limits.k_max == 0 {
            return Err(Error::Config("limits.k_max must be at least 1".into()));
        }
        for &f in &self.eval.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("training fraction must lie in (0, 1], got {f}")));
            }
        }
        Ok(())
    }

    /// Short hash over the embedding-shaping settings (evaluation settings,
    /// paths and the dataset name are excluded).
    pub fn config_hash(&self) -> Result<String> {
        let key = self.embedding_key()?;
        Ok(short_hash(key.to_string().as_bytes()))
    }

    fn embedding_key(&self) -> Result<serde_json::Value> {
        let key = EmbeddingKey {
            tau: self.tau,
            components: self.resolved_components()?,
            anisotropy_k: self.anisotropy_k,
            anisotropy_target: self.anisotropy_target,
            mode: self.mode,
            sparsify_p: self.sparsify_p,
            gmm: &self.gmm,
            limits: &self.limits,
            averaging: self.averaging,
            idf: self.idf,
            seed: self.seed,
        };
        Ok(serde_json::to_value(key).expect("key serializes"))
    }

    /// Row name for reports, e.g. `ctxd+aniso6`.
    pub fn method_name(&self) -> String {
        let base = match self.mode {
            Mode::Ctxd => "ctxd",
            Mode::WeightAvg => "weight_avg",
        };
        match self.anisotropy_k {
            AnisotropyK::Count(k) if k > 0 => format!("{base}+aniso{k}"),
            _ => base.to_string(),
        }
    }

    fn word_anisotropy(&self) -> Option<usize> {
        match (self.anisotropy_k, self.anisotropy_target) {
            (AnisotropyK::Count(k), AnisotropyTarget::Words) => Some(k),
            _ => None,
        }
    }

    fn doc_anisotropy(&self) -> Option<usize> {
        match (self.anisotropy_k, self.anisotropy_target) {
            (AnisotropyK::Count(k), AnisotropyTarget::Documents) => Some(k),
            _ => None,
        }
    }
}

/// Parses `0.1..0.5` (step 0.1, with 1.0 appended), `0.1..0.5:0.05`, a comma
/// list, or a single value.
pub fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("cannot parse fractions {s:?}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
    if let Some((lo, rest)) = s.split_once("..") {
        let (hi, step) = match rest.split_once(':') {
            Some((hi, step)) => (num(hi)?, num(step)?),
            None => (num(rest)?, 0.1),
        };
        let lo = num(lo)?;
        if !(step > 0.0) || hi < lo {
            return Err(bad());
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        let mut out: Vec<f64> = (0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect();
        if out.last() != Some(&1.0) {
            out.push(1.0);
        }
        return Ok(out);
    }
    s.split(',').map(num).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub stage: String,
    pub config_hash: String,
    pub config: serde_json::Value,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn staged<R>(stage: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    f().map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        },
    })
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializes")
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// What [`Pipeline::run`] produced.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub doc_vectors: DocumentVectorSet<f64>,
    pub runs: Vec<EvalRun>,
    pub report: Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyReport {
    pub k: String,
    pub words: usize,
    pub vectors: usize,
    pub mean_cosine_before: Option<f64>,
    pub mean_cosine_after: Option<f64>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    hash: String,
    force: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, force: bool) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.config_hash()?;
        Ok(Pipeline { cfg, hash, force })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.work_dir.join(name)
    }

    fn write_artifact(&self, stage: &str, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let meta = ArtifactMeta {
            stage: stage.to_string(),
            config_hash: self.hash.clone(),
            config: self.cfg.embedding_key()?,
        };
        let mp = meta_path(&path);
        std::fs::write(&mp, to_pretty(&meta)).map_err(|e| Error::io(&mp, e))?;
        Ok(path)
    }

    /// Path of an upstream artifact after checking it exists and matches the
    /// current config hash.
    fn require(&self, producer: &str, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        let mp = meta_path(&path);
        if !path.exists() || !mp.exists() {
            return Err(Error::MissingArtifact {
                stage: producer.to_string(),
                path,
            });
        }
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let meta: ArtifactMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: format!("{}: {e}", mp.display()),
        })?;
        if meta.config_hash != self.hash {
            if self.force {
                log::warn!(
                    "using {} built with config {} (current {})",
                    path.display(),
                    meta.config_hash,
                    self.hash
                );
            } else {
                return Err(Error::StaleArtifact {
                    path,
                    expected: self.hash.clone(),
                    found: meta.config_hash,
                });
            }
        }
        Ok(path)
    }

    fn load_corpus_artifact(&self) -> Result<Corpus> {
        let path = self.require("ingest", CORPUS_FILE)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        parse_corpus(&text, CorpusFormat::Jsonl)
    }

    fn load_senses(&self) -> Result<SenseInventory<f64>> {
        let path = self.require("wsd", SENSES_FILE)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        SenseInventory::from_jsonl(&text, self.cfg.tau)
    }

    fn load_aniso(&self) -> Result<AnisotropyTransform<f64>> {
        AnisotropyTransform::read(&self.require("aniso", ANISO_FILE)?)
    }

    fn load_gmm(&self) -> Result<GmmModel<f64>> {
        GmmModel::read(&self.require("gmm", GMM_FILE)?)
    }

    pub fn load_doc_vectors(&self) -> Result<DocumentVectorSet<f64>> {
        DocumentVectorSet::read(&self.require("docvec", DOCVEC_FILE)?, self.cfg.resolved_components()?)
    }

    /// Loads the input corpus and stores it in the work directory.
    pub fn ingest(&self) -> Result<Corpus> {
        staged("ingest", || {
            let path = self
                .cfg
                .corpus
                .as_ref()
                .ok_or_else(|| Error::Config("no corpus path configured".into()))?;
            let corpus = load_corpus(path, self.cfg.corpus_format)?;
            if corpus.num_docs() == 0 {
                return Err(Error::invalid("corpus has no documents"));
            }
            let mut text = String::new();
            for d in corpus.docs() {
                text.push_str(
                    &serde_json::to_string(&serde_json::json!({
                        "id": d.source_id.unwrap_or(d.id as u64),
                        "tokens": d.tokens,
                        "label": d.label,
                        "split": d.split,
                    }))
                    .expect("document serializes"),
                );
                text.push('\n');
            }
            self.write_artifact("ingest", CORPUS_FILE, text.as_bytes())?;
            log::info!(
                "ingest: {} documents, {} labels, vocabulary {}",
                corpus.num_docs(),
                corpus.label_set().len(),
                corpus.vocab().len()
            );
            Ok(corpus)
        })
    }

    /// Induces senses from the embedding store and writes the inventory plus
    /// a polysemy report.
    pub fn wsd(&self) -> Result<SenseInventory<f64>> {
        staged("wsd", || {
            let corpus = self.load_corpus_artifact()?;
            let path = self
                .cfg
                .store
                .as_ref()
                .ok_or_else(|| Error::Config("no embedding store configured".into()))?;
            let store = read_store(path, self.cfg.embed_format, None)?;
            store.validate_alignment(&corpus)?;
            let wsd_cfg = WsdConfig {
                tau: self.cfg.tau,
                limits: self.cfg.limits,
                seed: self.cfg.seed,
                single_sense: self.cfg.mode == Mode::WeightAvg,
            };
            let inventory: SenseInventory<f64> = induce_senses(&store, &wsd_cfg)?;
            self.write_artifact("wsd", SENSES_FILE, inventory.to_jsonl().as_bytes())?;
            let dist = polysemy_distribution(&inventory);
            let buckets = polysemy_buckets(&dist);
            let report = serde_json::json!({
                "words": inventory.words().len(),
                "distribution": dist,
                "k1": buckets[0],
                "k2": buckets[1],
                "k3_plus": buckets[2],
            });
            self.write_artifact("wsd", POLYSEMY_FILE, to_pretty(&report).as_bytes())?;
            log::info!(
                "wsd: {} words, k=1 {:.2}%, k=2 {:.2}%, k>=3 {:.2}%",
                inventory.words().len(),
                buckets[0] * 100.0,
                buckets[1] * 100.0,
                buckets[2] * 100.0
            );
            // reload so downstream stages see the serialized centroids
            SenseInventory::from_jsonl(&inventory.to_jsonl(), self.cfg.tau)
        })
    }

    /// Fits the word-level anisotropy transform (identity when disabled or
    /// applied to documents instead) and reports mean cosine before/after.
    pub fn aniso(&self) -> Result<AnisotropyTransform<f64>> {
        staged("aniso", || {
            let inventory = self.load_senses()?;
            let entries = inventory.sense_vocabulary();
            if entries.is_empty() {
                return Err(Error::invalid("sense vocabulary is empty"));
            }
            let dim = entries[0].vector.len();
            let vectors: Vec<&[f64]> = entries.iter().map(|e| e.vector.as_slice()).collect();
            let transform = match self.cfg.word_anisotropy() {
                Some(k) => fit_transform(&vectors, k)?,
                None => AnisotropyTransform::identity(dim),
            };
            self.write_artifact("aniso", ANISO_FILE, &transform.to_bytes())?;
            let report = self.anisotropy_report(&inventory, &transform)?;
            self.write_artifact("aniso", ANISO_REPORT_FILE, to_pretty(&report).as_bytes())?;
            if let (Some(b), Some(a)) = (report.mean_cosine_before, report.mean_cosine_after) {
                log::info!(
                    "aniso: mean pairwise cosine {b:.4} -> {a:.4} over {} words",
                    report.words
                );
            }
            Ok(transform)
        })
    }

    fn anisotropy_report(
        &self,
        inventory: &SenseInventory<f64>,
        transform: &AnisotropyTransform<f64>,
    ) -> Result<AnisotropyReport> {
        let mut words: Vec<(usize, &str)> = inventory
            .words()
            .iter()
            .map(|w| (w.tags.len(), w.word.as_str()))
            .collect();
        words.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(b.1)));
        words.truncate(ANISO_REPORT_WORDS);
        let mut before = Vec::new();
        for (_, w) in &words {
            before.extend(inventory.word(w).expect("listed word").centroids.iter().cloned());
        }
        let after = before.iter().map(|v| transform.apply(v)).collect::<Result<Vec<_>>>()?;
        let seed = derive_seed(self.cfg.seed, "aniso", "report");
        let measure = |vs: &[Vec<f64>]| mean_pairwise_cosine(vs, EXHAUSTIVE_PAIR_LIMIT, seed).ok();
        Ok(AnisotropyReport {
            k: self.cfg.anisotropy_k.to_string(),
            words: words.len(),
            vectors: before.len(),
            mean_cosine_before: measure(&before),
            mean_cosine_after: measure(&after),
        })
    }

    /// Sense vectors after the word-level transform, keyed by sense token.
    fn sense_vectors(
        &self,
        inventory: &SenseInventory<f64>,
        transform: &AnisotropyTransform<f64>,
    ) -> Result<Vec<(String, Vec<f64>)>> {
        inventory
            .sense_vocabulary()
            .into_iter()
            .map(|e| Ok((e.token, transform.apply(&e.vector)?)))
            .collect()
    }

    pub fn gmm(&self) -> Result<GmmModel<f64>> {
        staged("gmm", || {
            let inventory = self.load_senses()?;
            let transform = self.load_aniso()?;
            let vectors: Vec<Vec<f64>> = self
                .sense_vectors(&inventory, &transform)?
                .into_iter()
                .map(|(_, v)| v)
                .collect();
            let k = self.cfg.resolved_components()?;
            let fit = fit_gmm(&vectors, k, derive_seed(self.cfg.seed, "gmm", "fit"), &self.cfg.gmm)?;
            self.write_artifact("gmm", GMM_FILE, &fit.model.to_bytes())?;
            let report = serde_json::json!({
                "components": k,
                "points": vectors.len(),
                "iterations": fit.iterations,
                "converged": fit.converged,
                "objective": fit.objective_trace,
                "log_likelihood": fit.log_likelihood_trace,
            });
            self.write_artifact("gmm", GMM_REPORT_FILE, to_pretty(&report).as_bytes())?;
            log::info!(
                "gmm: K={k} over {} sense vectors, {} iterations",
                vectors.len(),
                fit.iterations
            );
            GmmModel::from_bytes(&fit.model.to_bytes())
        })
    }

    /// Builds word-topic vectors and averages them into document vectors.
    pub fn docvec(&self) -> Result<DocumentVectorSet<f64>> {
        staged("docvec", || {
            let corpus = self.load_corpus_artifact()?;
            let inventory = self.load_senses()?;
            let transform = self.load_aniso()?;
            let model = self.load_gmm()?;
            let k = model.num_components();
            let d = model.dim();

            let streams: Vec<Vec<Option<String>>> = corpus
                .docs()
                .iter()
                .map(|doc| {
                    (0..doc.tokens.len() as u32)
                        .map(|t| inventory.tag_at(doc.id, t).map(|(w, s)| sense_token(w, s)))
                        .collect()
                })
                .collect();
            let idf = match self.cfg.idf {
                IdfDomain::Sense => IdfTable::from_streams(streams.iter().map(|s| s.iter().flatten()))?,
                IdfDomain::Surface => IdfTable::from_streams(corpus.docs().iter().map(|doc| doc.tokens.iter()))?,
            };

            let sense_vectors = self.sense_vectors(&inventory, &transform)?;
            let entries = inventory.sense_vocabulary();
            let wtvs = sense_vectors
                .par_iter()
                .zip(entries.par_iter())
                .map(|((token, v), entry)| {
                    let post = model.posterior(v)?;
                    let key = match self.cfg.idf {
                        IdfDomain::Sense => token.as_str(),
                        IdfDomain::Surface => entry.word.as_str(),
                    };
                    Ok((token.clone(), build_word_topic_vector(v, &post, idf.get(key)?)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut table = WordTopicTable::new(k, d);
            for (token, wtv) in wtvs {
                table.insert(token, wtv)?;
            }

            let built = streams
                .par_iter()
                .map(|s| build_document_vector(s.iter().map(|t| t.as_deref()), &table, self.cfg.averaging))
                .collect::<Result<Vec<_>>>()?;
            let empty = built.iter().filter(|(_, used)| *used == 0).count();
            if empty > 0 {
                log::warn!("docvec: {empty} document(s) have no embedded tokens and get a zero vector");
            }
            let mut set = DocumentVectorSet::new(k, d, built.into_iter().map(|(v, _)| v).collect())?;
            if let Some(kd) = self.cfg.doc_anisotropy() {
                let doc_transform = fit_transform(set.vectors(), kd)?;
                self.write_artifact("docvec", DOC_ANISO_FILE, &doc_transform.to_bytes())?;
                set = set.map_vectors(|v| doc_transform.apply(v).expect("dimension checked by fit"))?;
            }
            if let Some(p) = self.cfg.sparsify_p {
                set = sparsify(&set, p)?;
            }
            let bytes = set.to_bytes();
            self.write_artifact("docvec", DOCVEC_FILE, &bytes)?;
            log::info!("docvec: {} documents of dimension {}", set.len(), set.dim());
            DocumentVectorSet::from_bytes(&bytes, k)
        })
    }

    fn finish_run(&self, mut run: EvalRun) -> EvalRun {
        run.name = self.cfg.method_name();
        run.dataset = self.cfg.dataset.clone();
        run.config_hash = self.hash.clone();
        run
    }

    fn write_result(&self, stem: &str, run: &EvalRun) -> Result<()> {
        let dir = self.path(RESULTS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let json = dir.join(format!("{stem}.json"));
        run.write(&json)?;
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, run.to_csv()).map_err(|e| Error::io(&csv, e))
    }

    fn write_curve(&self, name: &str, curve: &Curve) -> Result<PathBuf> {
        let dir = self.path(RESULTS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(name);
        std::fs::write(&path, curve.to_csv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// One classification run per fraction; with more than one fraction a
    /// curve CSV is written as well.
    pub fn eval_classify(&self, fractions: &[f64]) -> Result<(Vec<EvalRun>, Option<Curve>)> {
        staged("eval-classify", || {
            if fractions.is_empty() {
                return Err(Error::Config("no training fractions given".into()));
            }
            let corpus = self.load_corpus_artifact()?;
            let dv = self.load_doc_vectors()?;
            let mut runs = Vec::new();
            for &f in fractions {
                let cfg = ClassifyConfig {
                    repeats: if f >= 1.0 {
                        self.cfg.eval.full_repeats
                    } else {
                        self.cfg.eval.limited_repeats
                    },
                    c_grid: self.cfg.eval.c_grid.clone(),
                    linear: self.cfg.eval.linear,
                    seed: self.cfg.seed,
                };
                let run = self.finish_run(evaluate_classification(&dv, &corpus, f, &cfg)?);
                log::info!("eval-classify {}: accuracy {:.4}", run.setting, run.mean["accuracy"]);
                self.write_result(&format!("classify-{}", run.setting.trim_end_matches('%')), &run)?;
                runs.push(run);
            }
            let curve = if runs.len() > 1 {
                let c = Curve::from_runs("fraction", fractions, &runs);
                self.write_curve("classify_curve.csv", &c)?;
                Some(c)
            } else {
                None
            };
            Ok((runs, curve))
        })
    }

    pub fn eval_fewshot(&self, shots: &[usize]) -> Result<(Vec<EvalRun>, Curve)> {
        staged("eval-fewshot", || {
            let corpus = self.load_corpus_artifact()?;
            let dv = self.load_doc_vectors()?;
            let cfg = FewShotConfig {
                repeats: self.cfg.eval.fewshot_repeats,
                distance: self.cfg.eval.distance,
                seed: self.cfg.seed,
            };
            let (runs, curve) = few_shot_curve(&dv, &corpus, shots, &cfg)?;
            let runs: Vec<EvalRun> = runs.into_iter().map(|r| self.finish_run(r)).collect();
            for (run, k) in runs.iter().zip(shots) {
                log::info!("eval-fewshot {k}-shot: accuracy {:.4}", run.mean["accuracy"]);
                self.write_result(&format!("fewshot-{k}"), run)?;
            }
            self.write_curve("fewshot_curve.csv", &curve)?;
            Ok((runs, curve))
        })
    }

    pub fn eval_concept(&self, pairs_path: &Path) -> Result<EvalRun> {
        staged("eval-concept", || {
            let corpus = self.load_corpus_artifact()?;
            let dv = self.load_doc_vectors()?;
            let pairs: Vec<ConceptPair> = read_jsonl(pairs_path)?;
            let run = self.finish_run(concept_match(&dv, &corpus, &pairs)?);
            self.write_result("concept", &run)?;
            Ok(run)
        })
    }

    pub fn eval_sts(&self, pairs_path: &Path) -> Result<EvalRun> {
        staged("eval-sts", || {
            let corpus = self.load_corpus_artifact()?;
            let dv = self.load_doc_vectors()?;
            let pairs: Vec<StsPair> = read_jsonl(pairs_path)?;
            let run = self.finish_run(sts_eval(&dv, &corpus, &pairs)?);
            self.write_result("sts", &run)?;
            Ok(run)
        })
    }

    /// Runs every stage in order, then the configured evaluations and the
    /// merged report.
    pub fn run(&self) -> Result<PipelineOutput> {
        self.ingest()?;
        self.wsd()?;
        self.aniso()?;
        self.gmm()?;
        self.docvec()?;
        let doc_vectors = self.load_doc_vectors()?;
        let mut runs = Vec::new();
        if !self.cfg.eval.fractions.is_empty() {
            runs.extend(self.eval_classify(&self.cfg.eval.fractions)?.0);
        }
        if !self.cfg.eval.shots.is_empty() {
            runs.extend(self.eval_fewshot(&self.cfg.eval.shots)?.0);
        }
        if let Some(p) = &self.cfg.eval.concept_pairs {
            runs.push(self.eval_concept(p)?);
        }
        if let Some(p) = &self.cfg.eval.sts_pairs {
            runs.push(self.eval_sts(p)?);
        }
        let report = write_report(&runs, &self.cfg.work_dir)?;
        Ok(PipelineOutput {
            doc_vectors,
            runs,
            report,
        })
    }
}

/// Merges runs into `report.md` and `report.csv` under `out_dir`.
pub fn write_report(runs: &[EvalRun], out_dir: &Path) -> Result<Table> {
    let table = Table::from_runs(runs);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let md = out_dir.join("report.md");
    std::fs::write(&md, table.to_markdown()).map_err(|e| Error::io(&md, e))?;
    let csv = out_dir.join("report.csv");
    std::fs::write(&csv, table.to_csv()).map_err(|e| Error::io(&csv, e))?;
    Ok(table)
}

/// Reads result JSON files, or every `*.json` directly inside a directory.
pub fn collect_runs(inputs: &[PathBuf]) -> Result<Vec<EvalRun>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|q| q.extension().is_some_and(|x| x == "json"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Error::Config("no result files to report".into()));
    }
    files.iter().map(|f| EvalRun::read(f)).collect()
}

/// Polysemy distribution written by the `wsd` stage.
pub fn read_polysemy(work_dir: &Path) -> Result<BTreeMap<usize, f64>> {
    let path = work_dir.join(POLYSEMY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    #[derive(Deserialize)]
    struct Report {
        distribution: BTreeMap<usize, f64>,
    }
    let r: Report = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok(r.distribution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anisotropy_k_parses() {
        let c = PipelineConfig::from_json(r#"{"anisotropy_k": "off", "components": 3}"#).unwrap();
        assert_eq!(c.anisotropy_k, AnisotropyK::Off);
        let c = PipelineConfig::from_json(r#"{"anisotropy_k": 2, "components": 3}"#).unwrap();
        assert_eq!(c.anisotropy_k, AnisotropyK::Count(2));
        assert_eq!(PipelineConfig::default().anisotropy_k, AnisotropyK::Count(6));
        let back = PipelineConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        let off = PipelineConfig {
            anisotropy_k: AnisotropyK::Off,
            ..Default::default()
        };
        assert_eq!(
            PipelineConfig::from_json(&off.to_json()).unwrap().anisotropy_k,
            AnisotropyK::Off
        );
        assert!("x".parse::<AnisotropyK>().is_err());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn component_presets() {
        assert_eq!(preset_components("BBCSport", 1.0), Some(90));
        assert_eq!(preset_components("bbcsport", 0.1), Some(60));
        assert_eq!(preset_components("twitter", 0.2), Some(45));
        assert_eq!(preset_components("unknown", 1.0), None);
        let cfg = PipelineConfig {
            dataset: "amazon".into(),
            ..Default::default()
        };
        assert_eq!(cfg.resolved_components().unwrap(), 30);
        assert!(PipelineConfig::default().validate().is_err());
    }

    #[test]
    fn hash_ignores_eval_settings() {
        let a = PipelineConfig {
            components: Some(4),
            ..Default::default()
        };
        let mut b = a.clone();
        b.eval.full_repeats = 1;
        b.dataset = "other".into();
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.tau = 0.7;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    }

    #[test]
    fn fraction_lists() {
        assert_eq!(parse_fractions("0.1..0.5").unwrap(), vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0]);
        assert_eq!(parse_fractions("1.0").unwrap(), vec![1.0]);
        assert_eq!(parse_fractions("0.2,0.4").unwrap(), vec![0.2, 0.4]);
        assert_eq!(parse_fractions("0.5..1.0:0.25").unwrap(), vec![0.5, 0.75, 1.0]);
        assert!(parse_fractions("a..b").is_err());
    }

    #[test]
    fn method_names() {
        let mut c = PipelineConfig::default();
        assert_eq!(c.method_name(), "ctxd+aniso6");
        c.mode = Mode::WeightAvg;
        c.anisotropy_k = AnisotropyK::Off;
        assert_eq!(c.method_name(), "weight_avg");
    }
}
