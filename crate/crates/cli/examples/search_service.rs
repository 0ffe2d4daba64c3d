//! Builds a throwaway artifact home through the CLI commands, loads it the
//! way `echo-cohort serve` does and answers a few search requests in-process.

use clap::Parser;
use echo_cohort_cli::commands::{run, Cli};
use echo_cohort_cli::home::Home;
use echo_cohort_cli::service::{search, Loaded, SearchRequest};

fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let home = dir.path().to_str().expect("utf-8 temp path");
    let cli = |args: &[&str]| run(Cli::try_parse_from(["echo-cohort", "--home", home].iter().chain(args))?);
    cli(&["gen", "--reports", "400", "--seed", "3"])?;
    std::fs::write(dir.path().join("config.toml"), "[train]\ntotal_steps = 300\nwarmup_steps = 30\ncheckpoint_every = 100\n")?;
    cli(&["index"])?;
    cli(&["train", "--variant", "v0"])?;

    let loaded = Loaded::from_home(&Home::new(dir.path()))?;
    println!("retrievers: {}", loaded.retrievers().join(", "));
    for (query, retriever) in [("LVEF > 50%", "quantity"), ("severe hypokinesis", "bm25"), ("Severe global left ventricular hypokinesis.", "dense:v0")] {
        let req = SearchRequest { query: query.into(), k: 3, retriever: retriever.into(), include_judgments: true };
        match search(&loaded, &req) {
            Ok(resp) => {
                println!("\n{retriever} `{query}` ({:.2} ms)", resp.timing_ms);
                for r in resp.results {
                    println!("  #{:<4} {:>7.3} judged={:?} lvef={:?}", r.passage_id.0, r.score, r.judged, r.lvef_mentions.iter().map(|m| &m.raw_span).collect::<Vec<_>>());
                }
            }
            Err(e) => println!("\n{retriever} `{query}`: {} ({})", e.code, e.message),
        }
    }
    Ok(())
}
