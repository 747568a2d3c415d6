use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ctxd_scdv::corpus::CorpusFormat;
use ctxd_scdv::docvec::Averaging;
use ctxd_scdv::embed_store::{write_store, EmbedFormat};
use ctxd_scdv::eval::Distance;
use ctxd_scdv::pipeline::{
    collect_runs, parse_fractions, read_polysemy, write_report, AnisotropyK, AnisotropyTarget, IdfDomain, Mode,
    Pipeline, PipelineConfig,
};
use ctxd_scdv::synthetic::{generate, PlantedSpec};
use ctxd_scdv::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ctxd-scdv",
    version,
    about = "Sparse composite document vectors from contextual word-sense embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    overrides: Overrides,
}

/// Flags that override keys of the JSON config.
#[derive(Args, Default)]
struct Overrides {
    /// JSON config file; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_corpus_format)]
    corpus_format: Option<CorpusFormat>,
    /// Contextual embedding store (CEB1 or JSONL).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_embed_format)]
    embed_format: Option<EmbedFormat>,
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Centroid cosine threshold for sense splitting.
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// GMM component count.
    #[arg(long, global = true)]
    components: Option<usize>,
    /// Principal directions to remove, or "off".
    #[arg(long, global = true, value_parser = parse_aniso_k)]
    anisotropy_k: Option<AnisotropyK>,
    /// Apply anisotropy removal to "words" or "documents".
    #[arg(long, global = true, value_parser = parse_aniso_target)]
    anisotropy_target: Option<AnisotropyTarget>,
    /// "ctxd" or "weight_avg".
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    sparsify_p: Option<f64>,
    /// "occurrence" or "unique_type".
    #[arg(long, global = true, value_parser = parse_averaging)]
    averaging: Option<Averaging>,
    /// "sense" or "surface".
    #[arg(long, global = true, value_parser = parse_idf)]
    idf: Option<IdfDomain>,
    /// Reuse artifacts built with a different config.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and tokenize the corpus into the work directory.
    Ingest,
    /// Induce word senses from the embedding store.
    Wsd,
    /// Fit the anisotropy transform and report mean cosine before/after.
    Aniso,
    /// Fit the tied-covariance GMM over sense vectors.
    Gmm,
    /// Build document vectors.
    Docvec,
    /// Linear classification on full or limited training data.
    EvalClassify {
        /// "1.0", a list "0.1,0.5" or a range "0.1..0.5" (1.0 appended).
        #[arg(long)]
        fraction: Option<String>,
    },
    /// Prototypical few-shot classification.
    EvalFewshot {
        /// Comma-separated shot counts, e.g. "5,10,15,20".
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        /// "cosine" or "euclidean".
        #[arg(long, value_parser = parse_distance)]
        distance: Option<Distance>,
    },
    /// Concept matching by thresholded cosine.
    EvalConcept {
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// STS Pearson correlation.
    EvalSts {
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Merge result JSON files (or directories of them) into one table.
    Report {
        inputs: Vec<PathBuf>,
        /// Output directory for report.md and report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage and the configured evaluations.
    Run,
    /// Write a planted synthetic corpus and embedding store.
    Synth {
        /// Output directory for corpus.jsonl and store.ceb.
        #[arg(long)]
        out: PathBuf,
        /// JSON spec; missing keys take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        docs_per_class: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn config_err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse_corpus_format(s: &str) -> std::result::Result<CorpusFormat, String> {
    s.parse().map_err(config_err)
}

fn parse_embed_format(s: &str) -> std::result::Result<EmbedFormat, String> {
    s.parse().map_err(config_err)
}

fn parse_aniso_k(s: &str) -> std::result::Result<AnisotropyK, String> {
    s.parse().map_err(config_err)
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(config_err)
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(config_err)
}

fn parse_aniso_target(s: &str) -> std::result::Result<AnisotropyTarget, String> {
    parse_json_enum(s)
}

fn parse_averaging(s: &str) -> std::result::Result<Averaging, String> {
    parse_json_enum(s)
}

fn parse_idf(s: &str) -> std::result::Result<IdfDomain, String> {
    parse_json_enum(s)
}

fn parse_distance(s: &str) -> std::result::Result<Distance, String> {
    parse_json_enum(s)
}

impl Overrides {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(
            corpus,
            corpus_format,
            store,
            embed_format,
            work_dir,
            dataset,
            seed,
            tau,
            anisotropy_k,
            anisotropy_target,
            mode,
            averaging,
            idf
        );
        if let Some(k) = self.components {
            cfg.components = Some(k);
        }
        if let Some(p) = self.sparsify_p {
            cfg.sparsify_p = Some(p);
        }
        Ok(cfg)
    }
}

fn set_threads() -> Result<()> {
    let Ok(v) = std::env::var("CTXD_SCDV_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CTXD_SCDV_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<()> {
    set_threads()?;
    if let Command::Synth {
        out,
        spec,
        classes,
        docs_per_class,
        noise,
        dim,
    } = &cli.command
    {
        let mut s = match spec {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| Error::Io {
                    path: p.clone(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => PlantedSpec::default(),
        };
        if let Some(v) = classes {
            s.num_classes = *v;
        }
        if let Some(v) = docs_per_class {
            s.docs_per_class = *v;
        }
        if let Some(v) = noise {
            s.noise = *v;
        }
        if let Some(v) = dim {
            s.dim = *v;
        }
        if let Some(seed) = cli.overrides.seed {
            s.seed = seed;
        }
        let (corpus, store, _) = generate(&s)?;
        std::fs::create_dir_all(out).map_err(|source| Error::Io {
            path: out.clone(),
            source,
        })?;
        corpus.write_jsonl(&out.join("corpus.jsonl"))?;
        write_store(&store, &out.join("store.ceb"), EmbedFormat::Ceb1)?;
        println!(
            "wrote {} documents and {} vectors to {}",
            corpus.num_docs(),
            store.len(),
            out.display()
        );
        return Ok(());
    }
    if let Command::Report { inputs, out } = &cli.command {
        let cfg = cli.overrides.load()?;
        let inputs = if inputs.is_empty() {
            vec![cfg.work_dir.join("results")]
        } else {
            inputs.clone()
        };
        let runs = collect_runs(&inputs)?;
        let table = write_report(&runs, out.as_ref().unwrap_or(&cfg.work_dir))?;
        print!("{}", table.to_markdown());
        return Ok(());
    }

    let cfg = cli.overrides.load()?;
    let pipeline = Pipeline::new(cfg, cli.overrides.force)?;
    match cli.command {
        Command::Ingest => {
            let c = pipeline.ingest()?;
            println!("ingested {} documents ({} labels)", c.num_docs(), c.label_set().len());
        }
        Command::Wsd => {
            let inv = pipeline.wsd()?;
            println!("{} words", inv.words().len());
            for (k, f) in read_polysemy(&pipeline.config().work_dir)? {
                println!("k={k}: {:.2}%", f * 100.0);
            }
        }
        Command::Aniso => {
            let t = pipeline.aniso()?;
            println!("removed {} direction(s)", t.num_removed());
        }
        Command::Gmm => {
            let m = pipeline.gmm()?;
            println!("fitted {} components in dimension {}", m.num_components(), m.dim());
        }
        Command::Docvec => {
            let dv = pipeline.docvec()?;
            println!("{} document vectors of dimension {}", dv.len(), dv.dim());
        }
        Command::EvalClassify { fraction } => {
            let fractions = match fraction {
                Some(s) => parse_fractions(&s)?,
                None => pipeline.config().eval.fractions.clone(),
            };
            let (runs, _) = pipeline.eval_classify(&fractions)?;
            for r in runs {
                println!(
                    "{}: accuracy {:.2} ({:.2})",
                    r.setting,
                    r.mean["accuracy"] * 100.0,
                    r.std["accuracy"] * 100.0
                );
            }
        }
        Command::EvalFewshot { shots, distance } => {
            let mut cfg = pipeline.config().clone();
            if let Some(d) = distance {
                cfg.eval.distance = d;
            }
            let shots = shots.unwrap_or_else(|| cfg.eval.shots.clone());
            let pipeline = Pipeline::new(cfg, cli.overrides.force)?;
            let (runs, _) = pipeline.eval_fewshot(&shots)?;
            for r in runs {
                println!(
                    "{}: accuracy {:.2} ({:.2})",
                    r.setting,
                    r.mean["accuracy"] * 100.0,
                    r.std["accuracy"] * 100.0
                );
            }
        }
        Command::EvalConcept { pairs } => {
            let pairs = pairs
                .or_else(|| pipeline.config().eval.concept_pairs.clone())
                .ok_or_else(|| Error::Config("no concept pairs given".into()))?;
            let r = pipeline.eval_concept(&pairs)?;
            println!(
                "accuracy {:.2}, F1 {:.2}, threshold {}",
                r.mean["accuracy"] * 100.0,
                r.mean["f1"] * 100.0,
                r.details["threshold"]
            );
        }
        Command::EvalSts { pairs } => {
            let pairs = pairs
                .or_else(|| pipeline.config().eval.sts_pairs.clone())
                .ok_or_else(|| Error::Config("no STS pairs given".into()))?;
            let r = pipeline.eval_sts(&pairs)?;
            for (k, v) in &r.mean {
                println!("{k}: {:.2}", v * 100.0);
            }
        }
        Command::Run => {
            let out = pipeline.run()?;
            print!("{}", out.report.to_markdown());
        }
        Command::Report { .. } | Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
