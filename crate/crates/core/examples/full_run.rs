//! Generates a desk-scale corpus, trains v0, v1 and v2 and prints the
//! comparison table. An optional argument names a TOML pipeline config.

use std::time::Instant;

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::pipeline::{run_all, PipelineConfig, Prepared};
use echo_cohort::train::trainer::Variant;

fn main() -> anyhow::Result<()> {
    let t = Instant::now();
    let config = match std::env::args().nth(1) {
        Some(path) => PipelineConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => PipelineConfig::default(),
    };
    let prep = Prepared::generate(ConditionCatalog::bundled(), &config)?;
    println!(
        "{} passages, {} train pool, {} validation queries ({:.1}s)",
        prep.corpus.len(),
        prep.training.pool.len(),
        prep.training.validation.len(),
        t.elapsed().as_secs_f64()
    );
    let out = run_all(&prep, &config, &Variant::ALL)?;
    for (v, o) in &out.trained {
        let l = o.log.losses();
        println!("{v}: best step {} val {:.3} loss {:.3} -> {:.3}", o.best_step, o.best_val_p10, l[0], l[l.len() - 1]);
    }
    print!("{}", out.table.render_text());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
