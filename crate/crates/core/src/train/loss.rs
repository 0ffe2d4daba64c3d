//! Multiple negatives ranking loss with in-batch positive masking, and its
//! exact gradient back to the encoder weights.
//!
//! For a batch of N (anchor, positive, negative) triplets the score matrix
//! `S` is `N x 2N`: column `j < N` is `s(a_i, p_j)` and column `N + j` is
//! `s(a_i, n_j)`. Anchor `i` contributes
//!
//! ```text
//! l_i = logsumexp_{k in K_i} S[i,k] - S[i,i]
//! ```
//!
//! where `K_i` holds its own positive and negative, every other negative,
//! and the other positives that the mask mode keeps. Masked terms are left
//! out of the sum entirely, so `l_i` does not depend on their scores at all.

use serde::{Deserialize, Serialize};

use crate::dense::{dot, norm, EncoderParams, SimKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MaskMode {
    /// Drop every other pair's positive from the denominator.
    #[default]
    AllOtherPositives,
    /// Drop another pair's positive only when it is judged relevant.
    JudgedRelevantOnly,
    /// Plain in-batch negatives.
    None,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ALL_OTHER_POSITIVES" => Ok(MaskMode::AllOtherPositives),
            "JUDGED_RELEVANT_ONLY" => Ok(MaskMode::JudgedRelevantOnly),
            "NONE" => Ok(MaskMode::None),
            _ => Err(Error::Config(format!("unknown mask mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub mode: MaskMode,
    /// Also drop other pairs' negatives that are judged relevant to the anchor.
    pub mask_judged_negatives: bool,
}

impl From<MaskMode> for MaskConfig {
    fn from(mode: MaskMode) -> Self {
        Self {
            mode,
            mask_judged_negatives: false,
        }
    }
}

/// Which passages are judged relevant to which anchor, row-major `N x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Relevance {
    pub n: usize,
    /// `positives[i * n + j]`: `p_j` relevant to `a_i`.
    pub positives: Vec<bool>,
    /// `negatives[i * n + j]`: `n_j` relevant to `a_i`.
    pub negatives: Vec<bool>,
}

impl Relevance {
    /// Only the diagonal positives are relevant.
    pub fn diagonal(n: usize) -> Self {
        let mut positives = vec![false; n * n];
        for i in 0..n {
            positives[i * n + i] = true;
        }
        Self {
            n,
            positives,
            negatives: vec![false; n * n],
        }
    }
}

/// Whether column `k` of row `i` enters the denominator.
pub fn included(i: usize, k: usize, rel: &Relevance, mask: MaskConfig) -> bool {
    let n = rel.n;
    if k == i || k == n + i {
        return true;
    }
    if k < n {
        match mask.mode {
            MaskMode::AllOtherPositives => false,
            MaskMode::JudgedRelevantOnly => !rel.positives[i * n + k],
            MaskMode::None => true,
        }
    } else {
        !(mask.mask_judged_negatives && rel.negatives[i * n + (k - n)])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    /// dL/dS, `N x 2N`, zero at masked entries.
    pub grad: Vec<f64>,
}

/// Loss and gradient from a precomputed `N x 2N` score matrix.
pub fn mnr_from_scores(scores: &[f64], rel: &Relevance, mask: MaskConfig) -> Result<ScoreLoss> {
    let n = rel.n;
    if n == 0 {
        return Err(Error::validation("batch", "empty batch"));
    }
    if scores.len() != 2 * n * n {
        return Err(Error::validation("scores", format!("expected {} entries, got {}", 2 * n * n, scores.len())));
    }
    if let Some(pos) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite similarity {} at anchor {}, column {} (batch of {n})",
            scores[pos],
            pos / (2 * n),
            pos % (2 * n)
        )));
    }
    let mut per_anchor = Vec::with_capacity(n);
    let mut grad = vec![0.0; 2 * n * n];
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        let row = &scores[i * 2 * n..(i + 1) * 2 * n];
        let cols: Vec<usize> = (0..2 * n).filter(|&k| included(i, k, rel, mask)).collect();
        let max = cols.iter().map(|&k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = cols.iter().map(|&k| (row[k] - max).exp()).sum();
        let lse = max + sum.ln();
        per_anchor.push(lse - row[i]);
        let g = &mut grad[i * 2 * n..(i + 1) * 2 * n];
        for &k in &cols {
            g[k] = (row[k] - lse).exp() * inv_n;
        }
        g[i] -= inv_n;
    }
    let loss = per_anchor.iter().sum::<f64>() * inv_n;
    Ok(ScoreLoss {
        loss,
        per_anchor,
        grad,
    })
}

/// A batch as token ids, ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub anchors: Vec<Vec<u32>>,
    pub positives: Vec<Vec<u32>>,
    pub negatives: Vec<Vec<u32>>,
    pub relevance: Relevance,
}

impl EncodedBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    fn columns(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.positives.iter().chain(&self.negatives)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub e: Vec<f64>,
    pub w: Option<Vec<f64>>,
}

impl Grads {
    pub fn zeros(params: &EncoderParams) -> Self {
        Self {
            e: vec![0.0; params.e.len()],
            w: params.w.as_ref().map(|w| vec![0.0; w.len()]),
        }
    }
}

struct Encoded {
    pooled: Vec<f64>,
    out: Vec<f64>,
}

fn encode(params: &EncoderParams, ids: &[u32]) -> Encoded {
    let pooled = params.pool(ids);
    let out = params.project(&pooled);
    Encoded { pooled, out }
}

fn score(q: &[f64], c: &[f64], sim: SimKind) -> Result<f64> {
    match sim {
        SimKind::Dot => Ok(dot(q, c)),
        SimKind::Cosine => {
            let (nq, nc) = (norm(q), norm(c));
            if nq == 0.0 || nc == 0.0 {
                return Err(Error::Numeric("cosine similarity with a zero vector in batch".into()));
            }
            Ok(dot(q, c) / (nq * nc))
        }
    }
}

/// Accumulates `g * d s(q, c) / dq` into `dq`.
fn add_score_grad(dq: &mut [f64], q: &[f64], c: &[f64], s: f64, g: f64, sim: SimKind) {
    match sim {
        SimKind::Dot => {
            for (d, x) in dq.iter_mut().zip(c) {
                *d += g * x;
            }
        }
        SimKind::Cosine => {
            let (nq, nc) = (norm(q), norm(c));
            let a = g / (nq * nc);
            let b = g * s / (nq * nq);
            for ((d, x), y) in dq.iter_mut().zip(c).zip(q) {
                *d += a * x - b * y;
            }
        }
    }
}

/// Backpropagates `dv` through projection and mean pooling into `grads`.
fn backprop(params: &EncoderParams, grads: &mut Grads, ids: &[u32], enc: &Encoded, dv: &[f64]) {
    if ids.is_empty() {
        return;
    }
    let d = params.dim;
    let dm: Vec<f64> = match (&params.w, &mut grads.w) {
        (Some(w), Some(gw)) => {
            for r in 0..d {
                for c in 0..d {
                    gw[r * d + c] += dv[r] * enc.pooled[c];
                }
            }
            (0..d).map(|c| (0..d).map(|r| w[r * d + c] * dv[r]).sum()).collect()
        }
        _ => dv.to_vec(),
    };
    let inv = 1.0 / ids.len() as f64;
    for &t in ids {
        let row = &mut grads.e[t as usize * d..(t as usize + 1) * d];
        for (g, x) in row.iter_mut().zip(&dm) {
            *g += x * inv;
        }
    }
}

/// `N x 2N` scores of a batch under `params`.
pub fn batch_scores(batch: &EncodedBatch, params: &EncoderParams, sim: SimKind) -> Result<Vec<f64>> {
    let anchors: Vec<Vec<f64>> = batch.anchors.iter().map(|a| params.encode_ids(a)).collect();
    let cols: Vec<Vec<f64>> = batch.columns().map(|c| params.encode_ids(c)).collect();
    let mut s = Vec::with_capacity(anchors.len() * cols.len());
    for q in &anchors {
        for c in &cols {
            s.push(score(q, c, sim)?);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub loss: f64,
    pub per_anchor: Vec<f64>,
    pub grads: Grads,
}

/// Loss of a batch and its exact gradient with respect to `params`.
pub fn mnr_loss(batch: &EncodedBatch, params: &EncoderParams, sim: SimKind, mask: MaskConfig) -> Result<BatchLoss> {
    let n = batch.len();
    if batch.positives.len() != n || batch.negatives.len() != n || batch.relevance.n != n {
        return Err(Error::validation("batch", "anchors, positives, negatives and mask disagree in size"));
    }
    let anchors: Vec<Encoded> = batch.anchors.iter().map(|a| encode(params, a)).collect();
    let cols: Vec<Encoded> = batch.columns().map(|c| encode(params, c)).collect();
    let mut scores = Vec::with_capacity(2 * n * n);
    for q in &anchors {
        for c in &cols {
            scores.push(score(&q.out, &c.out, sim)?);
        }
    }
    let sl = mnr_from_scores(&scores, &batch.relevance, mask)?;

    let d = params.dim;
    let mut dq = vec![vec![0.0; d]; n];
    let mut dc = vec![vec![0.0; d]; 2 * n];
    for i in 0..n {
        for k in 0..2 * n {
            let g = sl.grad[i * 2 * n + k];
            if g == 0.0 {
                continue;
            }
            let s = scores[i * 2 * n + k];
            add_score_grad(&mut dq[i], &anchors[i].out, &cols[k].out, s, g, sim);
            add_score_grad(&mut dc[k], &cols[k].out, &anchors[i].out, s, g, sim);
        }
    }
    let mut grads = Grads::zeros(params);
    for (i, enc) in anchors.iter().enumerate() {
        backprop(params, &mut grads, &batch.anchors[i], enc, &dq[i]);
    }
    for (k, (enc, ids)) in cols.iter().zip(batch.columns()).enumerate() {
        backprop(params, &mut grads, ids, enc, &dc[k]);
    }
    Ok(BatchLoss {
        loss: sl.loss,
        per_anchor: sl.per_anchor,
        grads,
    })
}
