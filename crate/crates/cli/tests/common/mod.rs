#![allow(dead_code)]

use std::path::Path;

use clap::Parser;
use echo_cohort_cli::commands::{run, Cli};

pub const SMALL_CONFIG: &str = "reports = 300\n\n[train]\nbatch_size = 32\ntotal_steps = 60\nwarmup_steps = 10\ncheckpoint_every = 30\n";

pub fn cli(home: &Path, args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["echo-cohort".to_string(), "--home".into(), home.display().to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    run(Cli::try_parse_from(argv)?)
}

/// A home with corpus, index and a trained v0.
pub fn small_home() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let home = dir.path();
    cli(home, &["gen", "--reports", "300", "--seed", "5"]).unwrap();
    std::fs::write(home.join("config.toml"), SMALL_CONFIG).unwrap();
    cli(home, &["index"]).unwrap();
    cli(home, &["train", "--variant", "v0"]).unwrap();
    dir
}
