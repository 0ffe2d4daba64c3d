//! Builds the four evaluation suites and compares BM25 with an untrained
//! dense encoder, writing the table and its machine-readable rows.

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::eval::harness::{compare, Bm25Retriever, Retriever};
use echo_cohort::pipeline::{PipelineConfig, Prepared};

fn main() -> anyhow::Result<()> {
    let config = PipelineConfig::default();
    let prep = Prepared::generate(ConditionCatalog::bundled(), &config)?;
    for s in prep.suites.all() {
        println!("{:<12} {:>4} queries over {:>4} passages", s.name.to_string(), s.queries.len(), s.universe.len());
    }
    let bm25 = Bm25Retriever { params: config.bm25 };
    let untrained = prep.dense("untrained", prep.untrained(&config.train), &config.train)?;
    let models: [&dyn Retriever; 2] = [&bm25, &untrained];
    let table = compare(&models, &prep.suites.all(), &prep.corpus, config.train.seed, &config.hash())?;
    print!("\n{}", table.render_text());
    print!("\n{}", table.to_jsonl());
    Ok(())
}
