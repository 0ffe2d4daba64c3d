//! Subcommands of the `echo-cohort` binary.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::corpus::{generate_corpus, Corpus};
use echo_cohort::dense::DenseEncoder;
use echo_cohort::eval::harness::{compare, Bm25Retriever, DenseRetriever, Retriever};
use echo_cohort::eval::suites::SuiteName;
use echo_cohort::pipeline::{build_index_artifact, PipelineConfig, Prepared};
use echo_cohort::store::{load_index, load_params, save_index, save_params};
use echo_cohort::train::trainer::Variant;

use crate::home::{Home, DEFAULT_HOME, HOME_ENV};
use crate::service::{self, AppState, Loaded};

#[derive(Debug, Parser)]
#[command(name = "echo-cohort", version, about = "Echocardiography cohort retrieval: corpus synthesis, indexing, training, evaluation and search")]
pub struct Cli {
    /// Artifact root directory.
    #[arg(long, global = true, env = HOME_ENV, default_value = DEFAULT_HOME)]
    pub home: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and save it with its catalog.
    Gen(GenArgs),
    /// Build the cohort index, splits, BM25 and LVEF database.
    Index(ConfigArg),
    /// Train one dense variant.
    Train(TrainArgs),
    /// Compare retrievers on the evaluation suites.
    Eval(EvalArgs),
    /// Serve search over HTTP.
    Serve(ServeArgs),
    /// Print a human-readable dump of an artifact.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 2000)]
    pub reports: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// `default` for the bundled catalog, or a catalog file path.
    #[arg(long, default_value = "default")]
    pub catalog: String,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline config (TOML). Defaults to `config.toml` in the home.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub variant: Variant,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Keep every checkpoint under the home.
    #[arg(long)]
    pub checkpoints: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Comma-separated: bm25, untrained, dense:v0, dense:v1, dense:v2.
    #[arg(long, value_delimiter = ',', default_value = "bm25,untrained,dense:v0,dense:v1,dense:v2")]
    pub models: Vec<String>,
    /// `all`, or a comma-separated list of heldout, paraphrased, numerical, ood.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub suites: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArg,
    /// Where results files go. Defaults to `results/` in the home.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// 0 picks a free port; the bound address is printed either way.
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Enable `POST /reload` to re-read artifacts from the home.
    #[arg(long)]
    pub reload: bool,
    /// Searches in flight before the service answers 503.
    #[arg(long, default_value_t = 64)]
    pub max_concurrent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InspectWhat {
    Catalog,
    Splits,
    Index,
    Params,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub what: InspectWhat,
    /// Variant for `inspect params`.
    #[arg(long, default_value = "v0")]
    pub variant: Variant,
}

pub fn run(cli: Cli) -> Result<()> {
    let home = Home::new(cli.home);
    match cli.command {
        Command::Gen(a) => gen(&home, &a),
        Command::Index(a) => index(&home, &a),
        Command::Train(a) => train(&home, &a),
        Command::Eval(a) => eval(&home, &a),
        Command::Serve(a) => serve(&home, &a),
        Command::Inspect(a) => inspect(&home, &a),
    }
}

fn gen(home: &Home, a: &GenArgs) -> Result<()> {
    let (catalog, text) = match a.catalog.as_str() {
        "default" => (ConditionCatalog::bundled(), ConditionCatalog::bundled_text().to_string()),
        path => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading catalog {path}"))?;
            (ConditionCatalog::parse(&text).with_context(|| format!("parsing catalog {path}"))?, text)
        }
    };
    let corpus = generate_corpus(&catalog, a.reports, a.seed)?;
    home.ensure()?;
    std::fs::write(home.catalog(), text)?;
    corpus.save(home.corpus())?;
    println!("wrote {} reports to {}", corpus.len(), home.corpus().display());
    Ok(())
}

fn load_corpus(home: &Home) -> Result<Corpus> {
    let path = home.corpus();
    if !path.exists() {
        bail!("no corpus at {}; run `echo-cohort gen` first", path.display());
    }
    Ok(Corpus::load(&path).with_context(|| format!("loading {}", path.display()))?)
}

fn index(home: &Home, a: &ConfigArg) -> Result<()> {
    let config = home.load_config(a.config.as_deref())?;
    let catalog = home.load_catalog(None)?;
    let corpus = load_corpus(home)?;
    let artifact = build_index_artifact(&corpus, &catalog, &config.split, config.bm25)?;
    save_index(home.index(), &artifact)?;
    println!(
        "indexed {} passages: {} train, {} held-out, {} quarantined -> {}",
        corpus.len(),
        artifact.splits.train_passages.len(),
        artifact.splits.heldout_passages.len(),
        artifact.splits.quarantine_passages.len(),
        home.index().display()
    );
    Ok(())
}

fn prepare(home: &Home, config: &PipelineConfig) -> Result<Prepared> {
    let catalog = home.load_catalog(None)?;
    let corpus = load_corpus(home)?;
    let path = home.index();
    if !path.exists() {
        bail!("no index at {}; run `echo-cohort index` first", path.display());
    }
    let artifact = load_index(&path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Prepared::new(catalog, corpus, artifact, config)?)
}

fn train(home: &Home, a: &TrainArgs) -> Result<()> {
    let config = home.load_config(a.config.config.as_deref())?;
    let prep = prepare(home, &config)?;
    let dir = a.checkpoints.then(|| home.checkpoints(a.variant));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d)?;
    }
    let out = prep.train_with_checkpoints(a.variant, &config.train, dir.as_deref())?;
    std::fs::create_dir_all(home.models())?;
    save_params(home.params(a.variant), &prep.vocab, &out.params, &config.train.encoder)?;
    let log_path = home.train_log(a.variant);
    std::fs::create_dir_all(log_path.parent().expect("log path has a parent"))?;
    std::fs::write(&log_path, out.log.to_jsonl())?;
    println!(
        "trained {}: best step {} (validation P@10 {:.3}) -> {}",
        a.variant,
        out.best_step,
        out.best_val_p10,
        home.params(a.variant).display()
    );
    Ok(())
}

fn parse_suites(names: &[String]) -> Result<Vec<SuiteName>> {
    if names.iter().any(|n| n == "all") {
        return Ok(SuiteName::ALL.to_vec());
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for n in names {
        let s: SuiteName = n.parse().map_err(|e| anyhow::anyhow!("{e}"))?;
        if seen.insert(s) {
            out.push(s);
        }
    }
    Ok(out)
}

fn eval(home: &Home, a: &EvalArgs) -> Result<()> {
    let config = home.load_config(a.config.config.as_deref())?;
    let prep = prepare(home, &config)?;
    let suites = parse_suites(&a.suites)?;
    let mut models: Vec<Box<dyn Retriever>> = Vec::new();
    for m in &a.models {
        let model: Box<dyn Retriever> = match m.as_str() {
            "bm25" => Box::new(Bm25Retriever { params: config.bm25 }),
            "untrained" => Box::new(prep.dense("untrained", prep.untrained(&config.train), &config.train)?),
            other => {
                let v: Variant = other
                    .strip_prefix("dense:")
                    .ok_or_else(|| anyhow::anyhow!("unknown model `{other}`"))?
                    .parse()
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let path = home.params(v);
                let p = load_params(&path).with_context(|| format!("loading {}; run `echo-cohort train --variant {v}`", path.display()))?;
                Box::new(DenseRetriever {
                    name: other.to_string(),
                    encoder: DenseEncoder::new(p.vocab, p.params, p.config)?,
                })
            }
        };
        models.push(model);
    }
    let refs: Vec<&dyn Retriever> = models.iter().map(|m| m.as_ref()).collect();
    let specs: Vec<_> = suites.iter().map(|s| prep.suites.get(*s)).collect();
    let table = compare(&refs, &specs, &prep.corpus, config.train.seed, &config.hash())?;
    let text = table.render_text();
    print!("{text}");
    let out = a.out_dir.clone().unwrap_or_else(|| home.results());
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("results.txt"), &text)?;
    std::fs::write(out.join("results.jsonl"), table.to_jsonl())?;
    std::fs::write(out.join("per_query.jsonl"), table.per_query_jsonl())?;
    log::info!("results written to {}", out.display());
    Ok(())
}

fn serve(home: &Home, a: &ServeArgs) -> Result<()> {
    let loaded = Loaded::from_home(home)?;
    let state = AppState::new(loaded, a.max_concurrent, a.reload.then(|| home.clone()));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(service::serve(state, &a.host, a.port))
}

fn inspect(home: &Home, a: &InspectArgs) -> Result<()> {
    match a.what {
        InspectWhat::Catalog => {
            let catalog = home.load_catalog(None)?;
            println!("catalog {} ({})", catalog.version, catalog.content_hash());
            for c in &catalog.conditions {
                println!("{}{}", c.name, if c.is_ood { " [ood]" } else { "" });
                for s in &c.subcategories {
                    let kind = if s.is_quantity() { " [quantity]" } else { "" };
                    println!("  {} {}{kind}: {} variants", s.id, s.label, s.variants.len());
                }
            }
        }
        InspectWhat::Splits | InspectWhat::Index => {
            let artifact = load_index(home.index())?;
            let s = &artifact.splits;
            println!("split seed {} held-out fraction {}", s.seed, s.heldout_fraction);
            println!("train passages      {}", s.train_passages.len());
            println!("held-out passages   {}", s.heldout_passages.len());
            println!("quarantine passages {}", s.quarantine_passages.len());
            println!("training pool       {}", s.training_pool(&artifact.index).len());
            println!("ood conditions      {:?}", s.ood_conditions);
            println!("eval-only           {:?}", s.eval_only_subcategories.iter().map(|i| i.as_str()).collect::<Vec<_>>());
            if a.what == InspectWhat::Index {
                println!("catalog {} {}", artifact.catalog_version, artifact.catalog_hash);
                println!("corpus hash {}", artifact.corpus_hash);
                println!("bm25 documents {}", artifact.bm25.len());
                println!("passages with LVEF  {}", artifact.lvef.passages().count());
                for (id, posting) in &artifact.index.postings {
                    println!("  {id:<40} {}", posting.len());
                }
            }
        }
        InspectWhat::Params => {
            let path = home.params(a.variant);
            let p = load_params(&path).with_context(|| format!("loading {}", path.display()))?;
            println!("{}: dim {} vocab {} sim {:?} max_len {} projection {}", path.display(), p.params.dim, p.vocab.len(), p.config.sim, p.config.max_len, p.params.w.is_some());
        }
    }
    Ok(())
}
