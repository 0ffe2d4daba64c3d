//! Synthesizes a small labeled corpus and prints summary statistics and one
//! rendered report.
//!
//! cargo run --example generate_corpus -- 300 42

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::corpus::{corpus_stats, generate_corpus};
use echo_cohort::parser::render_report;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(300), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(42), |s| s.parse())?;

    let catalog = ConditionCatalog::bundled();
    let corpus = generate_corpus(&catalog, n, seed)?;
    let stats = corpus_stats(&corpus)?;
    println!(
        "{} reports from catalog {} ({} conditions, {} subcategories)",
        corpus.len(),
        catalog.version,
        catalog.conditions.len(),
        catalog.subcategories().count()
    );
    println!("passage tokens: mean {:.1} sd {:.1} range {}..{}", stats.passages.mean, stats.passages.std, stats.passages.min, stats.passages.max);
    println!("query tokens:   mean {:.1} sd {:.1}", stats.queries.mean, stats.queries.std);
    let with_lvef = corpus.reports.iter().filter(|r| r.lvef.is_some()).count();
    println!("{with_lvef} reports state an LVEF");

    let r = &corpus.reports[0];
    println!("\n--- {} labels {:?}", r.report_id, r.labels.iter().map(|l| l.as_str()).collect::<Vec<_>>());
    print!("{}", render_report(r));
    Ok(())
}
