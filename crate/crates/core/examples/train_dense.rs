//! Trains a small dense bi-encoder (v0) with the masked ranking loss and
//! compares it with the untrained encoder on one query.

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::eval::harness::{DenseSearcher, Searcher};
use echo_cohort::pipeline::{PipelineConfig, Prepared};
use echo_cohort::train::trainer::Variant;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut config = PipelineConfig { reports: 800, ..PipelineConfig::default() };
    config.train.total_steps = 600;
    config.train.warmup_steps = 60;
    config.train.checkpoint_every = 100;

    let prep = Prepared::generate(ConditionCatalog::bundled(), &config)?;
    let out = prep.train(Variant::V0, &config.train)?;
    let losses = out.log.losses();
    println!("loss {:.3} -> {:.3}, selected step {} (validation P@10 {:.3})", losses[0], losses[losses.len() - 1], out.best_step, out.best_val_p10);

    let suite = &prep.suites.heldout;
    let query = &suite.queries.iter().max_by_key(|q| q.r()).expect("non-empty suite").query;
    let relevant = &suite.queries.iter().find(|q| &q.query == query).unwrap().relevant;
    for (name, params) in [("untrained", prep.untrained(&config.train)), ("v0", out.params)] {
        let model = prep.dense(name, params, &config.train)?;
        let searcher = DenseSearcher::new(&model.encoder, &prep.corpus, &suite.universe);
        let hits = searcher.search(query, 10).iter().filter(|(p, _)| relevant.contains(p)).count();
        println!("{name:>9}: {hits}/10 relevant for `{query}`");
    }
    Ok(())
}
