//! The training loop: batches of sampled triplets, the masked ranking loss,
//! AdamW on a warmup/decay schedule and checkpoint selection by validation
//! P@10.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Corpus, PassageId};
use crate::dense::{similarity, sort_ranked, EncoderConfig, EncoderParams, SimKind, Vocab};
use crate::error::{Error, Result};
use crate::eval::metrics::precision_at_k;
use crate::optim::{scheduled_lr, AdamW, AdamWConfig};
use crate::pretrain::PretrainConfig;
use crate::train::loss::{mnr_loss, EncodedBatch, MaskConfig};
use crate::train::triplet::{SamplingConfig, TrainingSet, Triplet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Catalog triplets only.
    V0,
    /// Catalog plus LVEF triplets.
    V1,
    /// V1 from a masked-token pretrained warm start.
    V2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::V0, Variant::V1, Variant::V2];

    pub fn uses_lvef(self) -> bool {
        self != Variant::V0
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::V0 => "v0",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v0" => Ok(Variant::V0),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Large-scale runs use 64.
    pub batch_size: usize,
    /// 2e-5 when fine-tuning a pretrained transformer.
    pub lr: f64,
    /// Large-scale runs use 1000.
    pub warmup_steps: usize,
    /// Large-scale runs use 200,000.
    pub total_steps: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
    pub mask: MaskConfig,
    pub sampling: SamplingConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr: 0.1,
            warmup_steps: 300,
            total_steps: 3000,
            checkpoint_every: 250,
            seed: 7,
            optimizer: AdamWConfig::default(),
            mask: MaskConfig::default(),
            sampling: SamplingConfig {
                lvef_fraction: 0.5,
                ..SamplingConfig::default()
            },
            encoder: EncoderConfig {
                sim: SimKind::Cosine,
                ..EncoderConfig::default()
            },
            pretrain: PretrainConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::validation("warmup_steps", "must not exceed total_steps"));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::validation("checkpoint_every", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("lr", "must be positive"));
        }
        let s = &self.sampling;
        if !(0.0..=1.0).contains(&s.lvef_fraction) || !(0.0..=1.0).contains(&s.paraphrase_prob) {
            return Err(Error::validation("sampling", "fractions must be in [0,1]"));
        }
        if !(0.0..1.0).contains(&s.validation_fraction) {
            return Err(Error::validation("sampling.validation_fraction", "must be in [0,1)"));
        }
        self.encoder.validate()?;
        self.pretrain.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        variant: Variant,
        seed: u64,
        config_hash: String,
        config: TrainConfig,
        validation_queries: usize,
    },
    Step {
        step: usize,
        loss: f64,
        lr: f64,
    },
    Checkpoint {
        step: usize,
        val_p10: f64,
        path: Option<PathBuf>,
    },
    Selected {
        step: usize,
        val_p10: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { loss, .. } => Some(*loss),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: EncoderParams,
    pub best_step: usize,
    pub best_val_p10: f64,
    pub log: TrainLog,
}

/// Pool passages as token ids, and a snapshot evaluator over them.
struct Validator<'a> {
    passages: Vec<(PassageId, Vec<u32>)>,
    queries: Vec<(Vec<u32>, &'a std::collections::BTreeSet<PassageId>)>,
    sim: SimKind,
}

impl Validator<'_> {
    fn p_at_10(&self, params: &EncoderParams) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        let vecs: Vec<(PassageId, Vec<f64>)> = self
            .passages
            .iter()
            .map(|(id, ids)| (*id, params.encode_ids(ids)))
            .collect();
        let mut total = 0.0;
        for (q, relevant) in &self.queries {
            let qv = params.encode_ids(q);
            let mut scored: Vec<(PassageId, f64)> = vecs
                .iter()
                .filter_map(|(id, v)| similarity(&qv, v, self.sim).ok().map(|s| (*id, s)))
                .collect();
            sort_ranked(&mut scored);
            let ranked: Vec<PassageId> = scored.iter().take(10).map(|(id, _)| *id).collect();
            total += precision_at_k(&ranked, relevant, 10);
        }
        total / self.queries.len() as f64
    }
}

/// Token ids for one sampled batch plus its relevance mask.
pub fn encode_batch(
    triplets: &[Triplet],
    set: &TrainingSet,
    vocab: &Vocab,
    passage_ids: &BTreeMap<PassageId, Vec<u32>>,
    max_len: usize,
) -> Result<EncodedBatch> {
    let lookup = |p: PassageId| {
        passage_ids
            .get(&p)
            .cloned()
            .ok_or_else(|| Error::Integrity(format!("passage {p} sampled outside the training pool")))
    };
    Ok(EncodedBatch {
        anchors: triplets.iter().map(|t| vocab.encode(&t.anchor_query, max_len)).collect(),
        positives: triplets.iter().map(|t| lookup(t.positive)).collect::<Result<_>>()?,
        negatives: triplets.iter().map(|t| lookup(t.negative)).collect::<Result<_>>()?,
        relevance: set.relevance(triplets),
    })
}

/// Trains one variant. `warm_start` replaces the random init; it is
/// required for [`Variant::V2`]. With `checkpoint_dir`, every checkpoint is
/// written there as `echo-params v1`.
pub fn train(
    variant: Variant,
    set: &TrainingSet,
    corpus: &Corpus,
    vocab: &Vocab,
    config: &TrainConfig,
    warm_start: Option<EncoderParams>,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutput> {
    config.validate()?;
    if variant == Variant::V2 && warm_start.is_none() {
        return Err(Error::Config("v2 needs pretrained warm-start params".into()));
    }
    let enc = &config.encoder;
    let mut params = warm_start.unwrap_or_else(|| EncoderParams::init(vocab.len(), enc, config.seed));
    params.check_shapes(enc, vocab)?;

    let passage_ids: BTreeMap<PassageId, Vec<u32>> = set
        .pool
        .iter()
        .map(|p| (*p, vocab.encode(corpus.passage(*p).unwrap_or(""), enc.max_len)))
        .collect();
    let validator = Validator {
        passages: passage_ids.iter().map(|(k, v)| (*k, v.clone())).collect(),
        queries: set
            .validation
            .iter()
            .filter(|q| variant.uses_lvef() || matches!(q.target, crate::cohort::QueryTarget::Subcategories { .. }))
            .map(|q| (vocab.encode(&q.query, enc.max_len), &q.relevant))
            .collect(),
        sim: enc.sim,
    };

    let config_hash = config.hash();
    let mut log = TrainLog::default();
    log.records.push(LogRecord::Header {
        variant,
        seed: config.seed,
        config_hash: config_hash.clone(),
        config: config.clone(),
        validation_queries: validator.queries.len(),
    });

    let save = |params: &EncoderParams, step: usize| -> Result<Option<PathBuf>> {
        let Some(dir) = checkpoint_dir else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{variant}-step{step:06}.params"));
        crate::store::save_params(&path, vocab, params, enc)?;
        Ok(Some(path))
    };

    let mut best = params.clone();
    let mut best_step = 0;
    let mut best_val = validator.p_at_10(&params);
    log.records.push(LogRecord::Checkpoint {
        step: 0,
        val_p10: best_val,
        path: save(&params, 0)?,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt_e = AdamW::new(params.e.len(), config.optimizer);
    let mut opt_w = params.w.as_ref().map(|w| AdamW::new(w.len(), config.optimizer));
    for step in 1..=config.total_steps {
        let triplets = set.sample_batch(config.batch_size, variant.uses_lvef(), &config.sampling, &mut rng)?;
        let batch = encode_batch(&triplets, set, vocab, &passage_ids, enc.max_len)?;
        let out = match mnr_loss(&batch, &params, enc.sim, config.mask) {
            Ok(o) if o.loss.is_finite() => o,
            Ok(o) => return Err(diverged(step, format!("loss {}", o.loss), best)),
            Err(Error::Numeric(m)) => return Err(diverged(step, m, best)),
            Err(e) => return Err(e),
        };
        let lr = scheduled_lr(config.lr, step, config.warmup_steps, config.total_steps);
        opt_e.step(&mut params.e, &out.grads.e, lr);
        if let (Some(opt), Some(w), Some(gw)) = (opt_w.as_mut(), params.w.as_mut(), out.grads.w.as_ref()) {
            opt.step(w, gw, lr);
        }
        if !params.is_finite() {
            return Err(diverged(step, "non-finite parameters after update".into(), best));
        }
        log.records.push(LogRecord::Step { step, loss: out.loss, lr });

        if step % config.checkpoint_every == 0 || step == config.total_steps {
            let val = validator.p_at_10(&params);
            log.records.push(LogRecord::Checkpoint {
                step,
                val_p10: val,
                path: save(&params, step)?,
            });
            if val > best_val {
                best_val = val;
                best_step = step;
                best = params.clone();
            }
        }
    }
    log.records.push(LogRecord::Selected {
        step: best_step,
        val_p10: best_val,
    });
    log::info!("{variant}: selected step {best_step} (validation P@10 {best_val:.3}, config {config_hash})");
    Ok(TrainOutput {
        params: best,
        best_step,
        best_val_p10: best_val,
        log,
    })
}

fn diverged(step: usize, reason: String, last_good: EncoderParams) -> Error {
    Error::Diverged {
        step,
        reason,
        last_good: Some(Box::new(last_good)),
    }
}
