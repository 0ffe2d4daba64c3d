//! Lexical retrieval with Okapi BM25 over a synthetic corpus.
//!
//! cargo run --example bm25_search -- "severe hypokinesis of the apex"

use echo_cohort::bm25::{Bm25Index, Bm25Params};
use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::corpus::generate_corpus;

fn main() -> anyhow::Result<()> {
    let query = std::env::args().nth(1).unwrap_or_else(|| "apical mural thrombus".into());
    let corpus = generate_corpus(&ConditionCatalog::bundled(), 500, 42)?;
    let index = Bm25Index::build(corpus.passages(), Bm25Params::default())?;
    println!("{} passages, average length {:.1} tokens", index.len(), index.avg_len);
    for (id, score) in index.search(&query, 5) {
        let text = corpus.passage(id).unwrap_or_default();
        println!("{:>7.3}  #{:<4} {}", score, id.0, &text[..text.len().min(110)]);
    }
    Ok(())
}
