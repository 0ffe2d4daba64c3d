//! Masked-token pretraining of the embedding table, CBOW style.
//!
//! Each sampled passage has every token masked with probability `mask_prob`
//! (at least one masked and one kept). The context vector `h` is the mean
//! embedding of the kept tokens, logits are `z = O h` over the vocabulary,
//! and the sample loss is the mean cross-entropy of the masked tokens:
//!
//! ```text
//! l = logsumexp(z) - (1/M) * sum_{masked m} z[t_m]
//! ```
//!
//! The output matrix `O` exists only during pretraining; the embedding table
//! is returned as a warm start.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dense::{EncoderConfig, EncoderParams, Vocab};
use crate::error::{Error, Result};
use crate::optim::{scheduled_lr, AdamW, AdamWConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub mask_prob: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            steps: 600,
            batch_size: 16,
            lr: 5e-3,
            warmup_steps: 50,
            seed: 13,
            optimizer: AdamWConfig::default(),
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::validation("pretrain.mask_prob", "must be in (0,1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("pretrain.batch_size", "must be >= 1"));
        }
        if self.warmup_steps > self.steps {
            return Err(Error::validation("pretrain.warmup_steps", "must not exceed steps"));
        }
        Ok(())
    }
}

/// One masked passage: token ids and which positions are hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmSample {
    pub ids: Vec<u32>,
    pub masked: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct MlmGrads {
    pub loss: f64,
    pub e: Vec<f64>,
    pub o: Vec<f64>,
}

/// Batch-mean loss and exact gradients for `e` (`V x d`) and `o` (`V x d`).
pub fn mlm_loss(e: &[f64], o: &[f64], dim: usize, samples: &[MlmSample]) -> Result<MlmGrads> {
    let v = o.len() / dim;
    let mut ge = vec![0.0; e.len()];
    let mut go = vec![0.0; o.len()];
    let mut total = 0.0;
    let b = samples.len().max(1) as f64;
    let mut z = vec![0.0; v];
    for s in samples {
        let kept: Vec<u32> = s.ids.iter().zip(&s.masked).filter(|(_, m)| !**m).map(|(t, _)| *t).collect();
        let hidden: Vec<u32> = s.ids.iter().zip(&s.masked).filter(|(_, m)| **m).map(|(t, _)| *t).collect();
        if kept.is_empty() || hidden.is_empty() {
            return Err(Error::validation("sample", "needs at least one masked and one unmasked token"));
        }
        let mut h = vec![0.0; dim];
        for &t in &kept {
            for (acc, x) in h.iter_mut().zip(&e[t as usize * dim..(t as usize + 1) * dim]) {
                *acc += x;
            }
        }
        let inv_k = 1.0 / kept.len() as f64;
        h.iter_mut().for_each(|x| *x *= inv_k);

        for (j, zj) in z.iter_mut().enumerate() {
            *zj = o[j * dim..(j + 1) * dim].iter().zip(&h).map(|(a, b)| a * b).sum();
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let inv_m = 1.0 / hidden.len() as f64;
        let target: f64 = hidden.iter().map(|&t| z[t as usize]).sum::<f64>() * inv_m;
        let loss = lse - target;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite pretraining loss {loss}")));
        }
        total += loss;

        // dz = (softmax(z) - counts / M) / B
        let mut dz: Vec<f64> = z.iter().map(|x| (x - lse).exp() / b).collect();
        for &t in &hidden {
            dz[t as usize] -= inv_m / b;
        }
        let mut dh = vec![0.0; dim];
        for (j, g) in dz.iter().enumerate() {
            let row = j * dim..(j + 1) * dim;
            for (gq, hq) in go[row.clone()].iter_mut().zip(&h) {
                *gq += g * hq;
            }
            for (d, oq) in dh.iter_mut().zip(&o[row]) {
                *d += g * oq;
            }
        }
        for &t in &kept {
            for (g, x) in ge[t as usize * dim..(t as usize + 1) * dim].iter_mut().zip(&dh) {
                *g += x * inv_k;
            }
        }
    }
    Ok(MlmGrads {
        loss: total / b,
        e: ge,
        o: go,
    })
}

/// Masks `ids` with probability `p`, then forces at least one masked and one
/// kept position. `None` when the passage is shorter than two tokens.
pub fn mask_sample<R: Rng>(ids: &[u32], p: f64, rng: &mut R) -> Option<MlmSample> {
    if ids.len() < 2 {
        return None;
    }
    let mut masked: Vec<bool> = ids.iter().map(|_| rng.gen_bool(p)).collect();
    if !masked.iter().any(|m| *m) {
        let i = rng.gen_range(0..ids.len());
        masked[i] = true;
    }
    if masked.iter().all(|m| *m) {
        let i = rng.gen_range(0..ids.len());
        masked[i] = false;
    }
    Some(MlmSample {
        ids: ids.to_vec(),
        masked,
    })
}

#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: EncoderParams,
    pub losses: Vec<f64>,
}

impl PretrainOutput {
    /// Mean loss over the first and last tenth of the steps.
    pub fn first_last_tenth(&self) -> (f64, f64) {
        let n = self.losses.len();
        let w = (n / 10).max(1);
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        (mean(&self.losses[..w]), mean(&self.losses[n - w..]))
    }
}

/// Pretrains the embedding table of `init` on `passages`. The vocabulary is
/// only read.
pub fn masked_token_pretrain<'a>(
    passages: impl IntoIterator<Item = &'a str>,
    vocab: &Vocab,
    encoder: &EncoderConfig,
    config: &PretrainConfig,
    init: EncoderParams,
) -> Result<PretrainOutput> {
    config.validate()?;
    encoder.validate()?;
    if vocab.real_len() < 2 {
        return Err(Error::validation("vocab", "pretraining needs at least two tokens"));
    }
    init.check_shapes(encoder, vocab)?;
    let docs: Vec<Vec<u32>> = passages
        .into_iter()
        .map(|p| vocab.encode(p, encoder.max_len))
        .filter(|ids| ids.len() >= 2)
        .collect();
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let d = encoder.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 0.5 / d as f64;
    let mut o: Vec<f64> = (0..vocab.len() * d).map(|_| rng.gen_range(-bound..=bound)).collect();
    let mut params = init;
    let mut opt_e = AdamW::new(params.e.len(), config.optimizer);
    let mut opt_o = AdamW::new(o.len(), config.optimizer);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let batch: Vec<MlmSample> = (0..config.batch_size)
            .filter_map(|_| {
                let doc = docs.choose(&mut rng).expect("non-empty");
                mask_sample(doc, config.mask_prob, &mut rng)
            })
            .collect();
        let g = mlm_loss(&params.e, &o, d, &batch)?;
        losses.push(g.loss);
        let lr = scheduled_lr(config.lr, step, config.warmup_steps, config.steps);
        opt_e.step(&mut params.e, &g.e, lr);
        opt_o.step(&mut o, &g.o, lr);
    }
    Ok(PretrainOutput { params, losses })
}
