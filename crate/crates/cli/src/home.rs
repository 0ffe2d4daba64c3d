//! Artifact layout under the home directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use echo_cohort::catalog::{load_catalog, ConditionCatalog};
use echo_cohort::pipeline::PipelineConfig;
use echo_cohort::train::trainer::Variant;

pub const HOME_ENV: &str = "ECHO_COHORT_HOME";
pub const DEFAULT_HOME: &str = "echo-cohort-home";

#[derive(Debug, Clone)]
pub struct Home {
    pub root: PathBuf,
}

impl Home {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn ensure(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus.jsonl")
    }

    pub fn catalog(&self) -> PathBuf {
        self.root.join("catalog.echo")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index.echo")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn params(&self, variant: Variant) -> PathBuf {
        self.models().join(format!("{variant}.params"))
    }

    pub fn train_log(&self, variant: Variant) -> PathBuf {
        self.root.join("logs").join(format!("{variant}.train.jsonl"))
    }

    pub fn checkpoints(&self, variant: Variant) -> PathBuf {
        self.root.join("checkpoints").join(variant.to_string())
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results")
    }

    /// `--catalog` value: `default` is the bundled catalog, anything else a
    /// path. Without a flag, the copy saved by `gen` wins over the bundled one.
    pub fn load_catalog(&self, flag: Option<&str>) -> Result<ConditionCatalog> {
        match flag {
            Some("default") => Ok(ConditionCatalog::bundled()),
            Some(path) => Ok(load_catalog(path)?),
            None if self.catalog().exists() => Ok(load_catalog(self.catalog())?),
            None => Ok(ConditionCatalog::bundled()),
        }
    }

    /// `--config` path, else `config.toml` in the home, else defaults.
    pub fn load_config(&self, flag: Option<&Path>) -> Result<PipelineConfig> {
        let path = match flag {
            Some(p) => p.to_path_buf(),
            None if self.config().exists() => self.config(),
            None => return Ok(PipelineConfig::default()),
        };
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
        Ok(PipelineConfig::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?)
    }
}
