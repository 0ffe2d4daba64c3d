//! End-to-end orchestration: corpus to index, suites, trained variants and
//! the comparison table.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::{Bm25Index, Bm25Params};
use crate::catalog::ConditionCatalog;
use crate::cohort::{build_inverted_index, make_splits, SplitConfig};
use crate::corpus::{generate_corpus, Corpus};
use crate::dense::{DenseEncoder, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::eval::harness::{compare, Bm25Retriever, DenseRetriever, ResultsTable, Retriever};
use crate::eval::suites::{build_suites, SuiteConfig, SuiteName, Suites};
use crate::pretrain::masked_token_pretrain;
use crate::quantity::LvefDatabase;
use crate::store::IndexArtifact;
use crate::train::paraphrase::ParaphraseTable;
use crate::train::trainer::{train, TrainConfig, TrainOutput, Variant};
use crate::train::triplet::TrainingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub reports: usize,
    pub corpus_seed: u64,
    pub split: SplitConfig,
    pub bm25: Bm25Params,
    pub suites: SuiteConfig,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            reports: 2000,
            corpus_seed: 42,
            split: SplitConfig::default(),
            bm25: Bm25Params::default(),
            suites: SuiteConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

/// Inverted index, splits, BM25 over the whole corpus and the LVEF database.
pub fn build_index_artifact(
    corpus: &Corpus,
    catalog: &ConditionCatalog,
    split: &SplitConfig,
    bm25: Bm25Params,
) -> Result<IndexArtifact> {
    let index = build_inverted_index(corpus, catalog)?;
    let splits = make_splits(&index, catalog, split)?;
    Ok(IndexArtifact {
        catalog_version: catalog.version.clone(),
        catalog_hash: catalog.content_hash(),
        corpus_hash: corpus.content_hash(),
        bm25: Bm25Index::build(corpus.passages(), bm25)?,
        lvef: LvefDatabase::build(corpus.passages()),
        index,
        splits,
    })
}

/// Word vocabulary over every passage and catalog statement.
pub fn build_vocab(corpus: &Corpus, catalog: &ConditionCatalog) -> Vocab {
    let statements = catalog.subcategories().flat_map(|s| s.variants.iter().map(String::as_str));
    Vocab::build(corpus.passages().map(|(_, t)| t).chain(statements))
}

/// Everything derived from a corpus before training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub catalog: ConditionCatalog,
    pub corpus: Corpus,
    pub artifact: IndexArtifact,
    pub suites: Suites,
    pub training: TrainingSet,
    pub vocab: Vocab,
}

impl Prepared {
    pub fn new(catalog: ConditionCatalog, corpus: Corpus, artifact: IndexArtifact, config: &PipelineConfig) -> Result<Self> {
        artifact.check_against(&catalog, &corpus)?;
        let rules = ParaphraseTable::bundled_eval();
        let suites = build_suites(&catalog, &artifact.index, &artifact.splits, &artifact.lvef, &rules, &config.suites)?;
        let training = TrainingSet::build(
            &corpus,
            &catalog,
            &artifact.index,
            &artifact.splits,
            suites.eval_only_surfaces(),
            &config.train.sampling,
            config.train.seed,
        )?;
        let vocab = build_vocab(&corpus, &catalog);
        Ok(Self {
            catalog,
            corpus,
            artifact,
            suites,
            training,
            vocab,
        })
    }

    /// Generates the corpus and builds everything from scratch.
    pub fn generate(catalog: ConditionCatalog, config: &PipelineConfig) -> Result<Self> {
        let corpus = generate_corpus(&catalog, config.reports, config.corpus_seed)?;
        let artifact = build_index_artifact(&corpus, &catalog, &config.split, config.bm25)?;
        Self::new(catalog, corpus, artifact, config)
    }

    pub fn untrained(&self, config: &TrainConfig) -> EncoderParams {
        EncoderParams::init(self.vocab.len(), &config.encoder, config.seed)
    }

    /// Masked-token pretraining on the training pool passages.
    pub fn pretrain(&self, config: &TrainConfig) -> Result<EncoderParams> {
        let texts = self.training.pool.iter().filter_map(|p| self.corpus.passage(*p));
        let out = masked_token_pretrain(texts, &self.vocab, &config.encoder, &config.pretrain, self.untrained(config))?;
        let (first, last) = out.first_last_tenth();
        log::info!("pretraining loss {first:.3} -> {last:.3}");
        Ok(out.params)
    }

    pub fn train(&self, variant: Variant, config: &TrainConfig) -> Result<TrainOutput> {
        self.train_with_checkpoints(variant, config, None)
    }

    /// Like [`Prepared::train`], writing every checkpoint under `dir`.
    pub fn train_with_checkpoints(&self, variant: Variant, config: &TrainConfig, dir: Option<&Path>) -> Result<TrainOutput> {
        let warm = match variant {
            Variant::V2 => Some(self.pretrain(config)?),
            _ => None,
        };
        train(variant, &self.training, &self.corpus, &self.vocab, config, warm, dir)
    }

    pub fn dense(&self, name: impl Into<String>, params: EncoderParams, config: &TrainConfig) -> Result<DenseRetriever> {
        Ok(DenseRetriever {
            name: name.into(),
            encoder: DenseEncoder::new(self.vocab.clone(), params, config.encoder.clone())?,
        })
    }
}

/// Output of [`run_all`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub table: ResultsTable,
    pub trained: BTreeMap<Variant, TrainOutput>,
}

/// Trains `variants`, then compares BM25, the untrained encoder and every
/// trained variant on all four suites.
pub fn run_all(prep: &Prepared, config: &PipelineConfig, variants: &[Variant]) -> Result<RunOutput> {
    let mut trained = BTreeMap::new();
    for &v in variants {
        trained.insert(v, prep.train(v, &config.train)?);
    }
    let bm25 = Bm25Retriever { params: config.bm25 };
    let untrained = prep.dense("untrained", prep.untrained(&config.train), &config.train)?;
    let mut dense = Vec::new();
    for (v, out) in &trained {
        dense.push(prep.dense(format!("dense:{v}"), out.params.clone(), &config.train)?);
    }
    let mut models: Vec<&dyn Retriever> = vec![&bm25, &untrained];
    models.extend(dense.iter().map(|d| d as &dyn Retriever));
    let suites: Vec<_> = SuiteName::ALL.iter().map(|s| prep.suites.get(*s)).collect();
    let table = compare(&models, &suites, &prep.corpus, config.train.seed, &config.hash())?;
    Ok(RunOutput { table, trained })
}
