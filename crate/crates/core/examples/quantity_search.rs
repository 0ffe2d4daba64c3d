//! Quantity-aware LVEF search: parse comparator and range queries and match
//! them against the mentions extracted from a corpus.

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::corpus::generate_corpus;
use echo_cohort::quantity::{parse_quantity_query, LvefDatabase, MatchSemantics};

fn main() -> anyhow::Result<()> {
    let corpus = generate_corpus(&ConditionCatalog::bundled(), 500, 7)?;
    let db = LvefDatabase::build(corpus.passages());
    println!("{} of {} passages mention LVEF", db.passages().count(), corpus.len());

    for text in ["LVEF > 50%", "EF < 35%", "LVEF between 30-45%", "ejection fraction at least 60%", "LVEF = 55%", "severe hypokinesis"] {
        let Some(q) = parse_quantity_query(text) else {
            println!("{text:<32} not a quantity query");
            continue;
        };
        let strict = db.matching(&q, MatchSemantics::Strict);
        let overlap = db.matching(&q, MatchSemantics::Overlap);
        println!("{text:<32} {:?} {} {:?}: {} strict, {} overlap", q.relation, q.a, q.b, strict.len(), overlap.len());
        if let Some(p) = strict.iter().next() {
            for m in &db.mentions[p] {
                println!("    passage {} `{}`", p.0, m.raw_span);
            }
        }
    }
    Ok(())
}
