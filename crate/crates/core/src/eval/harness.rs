//! Running retrievers against suites and tabulating the results.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Index, Bm25Params};
use crate::corpus::{Corpus, PassageId};
use crate::dense::{DenseEncoder, DenseIndex};
use crate::error::{Error, Result};
use crate::eval::metrics::EvalInput;
use crate::eval::suites::{SuiteName, SuiteSpec};

/// A retriever indexed over one fixed universe.
pub trait Searcher {
    fn universe(&self) -> &BTreeSet<PassageId>;
    /// At most `k` passages, descending score.
    fn search(&self, query: &str, k: usize) -> Vec<(PassageId, f64)>;
}

/// Something that can be indexed over a universe and then searched.
pub trait Retriever {
    fn name(&self) -> String;
    fn searcher<'a>(&'a self, corpus: &'a Corpus, universe: &BTreeSet<PassageId>) -> Result<Box<dyn Searcher + 'a>>;
}

pub struct Bm25Searcher {
    universe: BTreeSet<PassageId>,
    pub index: Bm25Index,
}

impl Bm25Searcher {
    pub fn new(corpus: &Corpus, universe: &BTreeSet<PassageId>, params: Bm25Params) -> Result<Self> {
        Ok(Self {
            universe: universe.clone(),
            index: Bm25Index::build(corpus.subset(universe), params)?,
        })
    }
}

impl Searcher for Bm25Searcher {
    fn universe(&self) -> &BTreeSet<PassageId> {
        &self.universe
    }

    fn search(&self, query: &str, k: usize) -> Vec<(PassageId, f64)> {
        self.index.search(query, k)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bm25Retriever {
    pub params: Bm25Params,
}

impl Retriever for Bm25Retriever {
    fn name(&self) -> String {
        "bm25".into()
    }

    fn searcher<'a>(&'a self, corpus: &'a Corpus, universe: &BTreeSet<PassageId>) -> Result<Box<dyn Searcher + 'a>> {
        Ok(Box::new(Bm25Searcher::new(corpus, universe, self.params)?))
    }
}

pub struct DenseSearcher<'a> {
    universe: BTreeSet<PassageId>,
    encoder: &'a DenseEncoder,
    pub index: DenseIndex,
}

impl<'a> DenseSearcher<'a> {
    pub fn new(encoder: &'a DenseEncoder, corpus: &Corpus, universe: &BTreeSet<PassageId>) -> Self {
        Self {
            universe: universe.clone(),
            encoder,
            index: encoder.index(corpus.subset(universe)),
        }
    }
}

impl Searcher for DenseSearcher<'_> {
    fn universe(&self) -> &BTreeSet<PassageId> {
        &self.universe
    }

    fn search(&self, query: &str, k: usize) -> Vec<(PassageId, f64)> {
        self.index.search(&self.encoder.encode(query), k)
    }
}

pub struct DenseRetriever {
    pub name: String,
    pub encoder: DenseEncoder,
}

impl Retriever for DenseRetriever {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn searcher<'a>(&'a self, corpus: &'a Corpus, universe: &BTreeSet<PassageId>) -> Result<Box<dyn Searcher + 'a>> {
        Ok(Box::new(DenseSearcher::new(&self.encoder, corpus, universe)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query: String,
    pub r: usize,
    pub p_at_10: f64,
    pub p_at_100: f64,
    /// `None` when the query has no relevant passage.
    pub r_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub model: String,
    pub suite: SuiteName,
    pub p_at_10: f64,
    pub p_at_100: f64,
    pub r_precision: f64,
    /// Queries averaged over.
    pub queries: usize,
    /// Queries skipped because nothing is relevant.
    pub excluded: usize,
    pub per_query: Vec<QueryMetrics>,
}

/// Evaluates `searcher` on every query of `suite`. Averages are macro means
/// over queries with at least one relevant passage.
pub fn run_suite(model: &str, searcher: &dyn Searcher, suite: &SuiteSpec, k_max: usize) -> Result<SuiteResult> {
    if searcher.universe() != &suite.universe {
        return Err(Error::Config(format!(
            "{model}: indexed universe ({} passages) differs from suite {} ({} passages)",
            searcher.universe().len(),
            suite.name,
            suite.universe.len()
        )));
    }
    let mut per_query = Vec::with_capacity(suite.queries.len());
    let (mut p10, mut p100, mut rp) = (0.0, 0.0, 0.0);
    let mut excluded = 0;
    for q in &suite.queries {
        let k = k_max.max(q.r()).max(10);
        let ranked: Vec<PassageId> = searcher.search(&q.query, k).into_iter().map(|(id, _)| id).collect();
        let input = EvalInput::new(&ranked, &q.relevant);
        let m = QueryMetrics {
            query: q.query.clone(),
            r: q.r(),
            p_at_10: input.precision_at(10),
            p_at_100: input.precision_at(100),
            r_precision: input.r_precision(),
        };
        match m.r_precision {
            Some(r) => {
                p10 += m.p_at_10;
                p100 += m.p_at_100;
                rp += r;
            }
            None => {
                excluded += 1;
                log::debug!("{model}/{}: `{}` has no relevant passage, skipped", suite.name, q.query);
            }
        }
        per_query.push(m);
    }
    let n = suite.queries.len() - excluded;
    let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(SuiteResult {
        model: model.to_string(),
        suite: suite.name,
        p_at_10: mean(p10),
        p_at_100: mean(p100),
        r_precision: mean(rp),
        queries: n,
        excluded,
        per_query,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub seed: u64,
    pub config_hash: String,
    pub models: Vec<String>,
    pub suites: Vec<SuiteName>,
    pub cells: Vec<SuiteResult>,
}

impl ResultsTable {
    pub fn cell(&self, model: &str, suite: SuiteName) -> Option<&SuiteResult> {
        self.cells.iter().find(|c| c.model == model && c.suite == suite)
    }

    /// Aligned plain text, one row per model and three metric columns per
    /// suite.
    pub fn render_text(&self) -> String {
        let width = self.models.iter().map(String::len).max().unwrap_or(5).max(5);
        let mut out = String::new();
        let _ = write!(out, "{:width$}", "model");
        for s in &self.suites {
            let _ = write!(out, " | {:^26}", s.to_string());
        }
        out.push('\n');
        let _ = write!(out, "{:width$}", "");
        for _ in &self.suites {
            let _ = write!(out, " | {:>8} {:>8} {:>8}", "P@10", "P@100", "R-Prec");
        }
        out.push('\n');
        for m in &self.models {
            let _ = write!(out, "{m:width$}");
            for s in &self.suites {
                match self.cell(m, *s) {
                    Some(c) => {
                        let _ = write!(out, " | {:>8.3} {:>8.3} {:>8.3}", c.p_at_10, c.p_at_100, c.r_precision);
                    }
                    None => {
                        let _ = write!(out, " | {:>8} {:>8} {:>8}", "-", "-", "-");
                    }
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "seed {} config {}", self.seed, self.config_hash);
        out
    }

    /// One JSON record per (model, suite) cell, without per-query rows.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            model: &'a str,
            suite: SuiteName,
            p_at_10: f64,
            p_at_100: f64,
            r_precision: f64,
            queries: usize,
            excluded: usize,
            seed: u64,
            config_hash: &'a str,
        }
        let mut out = String::new();
        for c in &self.cells {
            let row = Row {
                model: &c.model,
                suite: c.suite,
                p_at_10: c.p_at_10,
                p_at_100: c.p_at_100,
                r_precision: c.r_precision,
                queries: c.queries,
                excluded: c.excluded,
                seed: self.seed,
                config_hash: &self.config_hash,
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    /// Per-query rows of every cell, for auditing.
    pub fn per_query_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            for q in &c.per_query {
                let v = serde_json::json!({"model": c.model, "suite": c.suite, "metrics": q});
                out.push_str(&v.to_string());
                out.push('\n');
            }
        }
        out
    }
}

/// Evaluates each model on each suite. Every model is indexed once per
/// distinct suite universe.
pub fn compare(
    models: &[&dyn Retriever],
    suites: &[&SuiteSpec],
    corpus: &Corpus,
    seed: u64,
    config_hash: &str,
) -> Result<ResultsTable> {
    if models.is_empty() || suites.is_empty() {
        return Err(Error::Config("compare needs at least one model and one suite".into()));
    }
    let mut cells = Vec::new();
    for m in models {
        let name = m.name();
        let mut cached: Vec<(BTreeSet<PassageId>, Box<dyn Searcher + '_>)> = Vec::new();
        for s in suites {
            let pos = match cached.iter().position(|(u, _)| u == &s.universe) {
                Some(p) => p,
                None => {
                    cached.push((s.universe.clone(), m.searcher(corpus, &s.universe)?));
                    cached.len() - 1
                }
            };
            cells.push(run_suite(&name, cached[pos].1.as_ref(), s, 100)?);
        }
    }
    Ok(ResultsTable {
        seed,
        config_hash: config_hash.to_string(),
        models: models.iter().map(|m| m.name()).collect(),
        suites: suites.iter().map(|s| s.name).collect(),
        cells,
    })
}
