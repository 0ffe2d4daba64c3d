//! The toy bi-encoder: a word vocabulary, a shared embedding table with mean
//! pooling and an optional square projection, similarity functions and a
//! brute-force vector index.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::PassageId;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

pub const PAD: u32 = 0;
pub const OOV: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from every token in `texts`, ids assigned in
    /// lexicographic order after the two reserved entries.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t));
        }
        let mut tokens = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        tokens.extend(set.into_iter().filter(|t| t != PAD_TOKEN && t != OOV_TOKEN));
        Self::from_tokens(tokens).expect("reserved tokens in place")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != OOV_TOKEN {
            return Err(Error::Corrupt {
                what: "vocabulary",
                message: "must start with the reserved <pad> and <unk> entries".into(),
            });
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId(t.clone()));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens other than PAD and OOV.
    pub fn real_len(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(OOV)
    }

    /// Token ids of `text`, truncated to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        tokenize(text)
            .iter()
            .take(max_len)
            .map(|t| self.id(t))
            .collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update([b'\n']);
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimKind {
    #[default]
    Dot,
    Cosine,
}

impl fmt::Display for SimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimKind::Dot => "dot",
            SimKind::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for SimKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(SimKind::Dot),
            "cosine" => Ok(SimKind::Cosine),
            _ => Err(Error::Config(format!("unknown similarity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Desk scale 64; a BERT-base sized model would use 768.
    pub dim: usize,
    pub max_len: usize,
    pub sim: SimKind,
    pub use_projection: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            max_len: 300,
            sim: SimKind::Dot,
            use_projection: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::validation("encoder.dim", "must be >= 2"));
        }
        if self.max_len < 1 {
            return Err(Error::validation("encoder.max_len", "must be >= 1"));
        }
        Ok(())
    }
}

/// Trainable weights. `e` is `vocab_size x dim` and `w`, when present,
/// `dim x dim`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dim: usize,
    pub vocab_size: usize,
    pub e: Vec<f64>,
    pub w: Option<Vec<f64>>,
}

impl EncoderParams {
    /// Embeddings uniform in `[-0.5/d, 0.5/d]`; the projection starts at
    /// the identity.
    pub fn init(vocab_size: usize, config: &EncoderConfig, seed: u64) -> Self {
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 0.5 / d as f64;
        let mut e: Vec<f64> = (0..vocab_size * d).map(|_| rng.gen_range(-bound..=bound)).collect();
        e[..d].iter_mut().for_each(|x| *x = 0.0);
        let w = config.use_projection.then(|| {
            let mut w = vec![0.0; d * d];
            for i in 0..d {
                w[i * d + i] = 1.0;
            }
            w
        });
        Self {
            dim: d,
            vocab_size,
            e,
            w,
        }
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim;
        let i = id as usize;
        &self.e[i * d..(i + 1) * d]
    }

    pub fn is_finite(&self) -> bool {
        self.e.iter().all(|x| x.is_finite()) && self.w.as_ref().is_none_or(|w| w.iter().all(|x| x.is_finite()))
    }

    pub fn check_shapes(&self, config: &EncoderConfig, vocab: &Vocab) -> Result<()> {
        let ok = self.dim == config.dim
            && self.vocab_size == vocab.len()
            && self.e.len() == self.vocab_size * self.dim
            && self.w.is_some() == config.use_projection
            && self.w.as_ref().is_none_or(|w| w.len() == self.dim * self.dim);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "params (dim {}, vocab {}, projection {}) do not fit encoder (dim {}, vocab {}, projection {})",
                self.dim,
                self.vocab_size,
                self.w.is_some(),
                config.dim,
                vocab.len(),
                config.use_projection
            )))
        }
    }

    /// Mean of the embedding rows of `ids`; zero for an empty list.
    pub fn pool(&self, ids: &[u32]) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d];
        if ids.is_empty() {
            return m;
        }
        for &t in ids {
            for (acc, x) in m.iter_mut().zip(self.row(t)) {
                *acc += x;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        m
    }

    pub fn project(&self, m: &[f64]) -> Vec<f64> {
        match &self.w {
            None => m.to_vec(),
            Some(w) => matvec(w, m, self.dim),
        }
    }

    pub fn encode_ids(&self, ids: &[u32]) -> Vec<f64> {
        self.project(&self.pool(ids))
    }
}

/// `w` is `d x d` row-major.
pub fn matvec(w: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| dot(&w[i * d..(i + 1) * d], x)).collect()
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn similarity(u: &[f64], v: &[f64], kind: SimKind) -> Result<f64> {
    match kind {
        SimKind::Dot => Ok(dot(u, v)),
        SimKind::Cosine => {
            let (nu, nv) = (norm(u), norm(v));
            if nu == 0.0 || nv == 0.0 {
                return Err(Error::Numeric("cosine similarity with a zero vector".into()));
            }
            Ok(dot(u, v) / (nu * nv))
        }
    }
}

/// Vocabulary, weights and configuration bundled for inference.
#[derive(Debug, Clone)]
pub struct DenseEncoder {
    pub vocab: Vocab,
    pub params: EncoderParams,
    pub config: EncoderConfig,
}

impl DenseEncoder {
    pub fn new(vocab: Vocab, params: EncoderParams, config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config, &vocab)?;
        Ok(Self { vocab, params, config })
    }

    pub fn token_ids(&self, text: &str) -> Vec<u32> {
        self.vocab.encode(text, self.config.max_len)
    }

    pub fn encode(&self, text: &str) -> Vec<f64> {
        self.params.encode_ids(&self.token_ids(text))
    }

    pub fn index<'a>(&self, passages: impl IntoIterator<Item = (PassageId, &'a str)>) -> DenseIndex {
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (id, text) in passages {
            ids.push(id);
            vectors.extend(self.encode(text));
        }
        DenseIndex {
            dim: self.config.dim,
            sim: self.config.sim,
            ids,
            vectors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    pub dim: usize,
    pub sim: SimKind,
    pub ids: Vec<PassageId>,
    pub vectors: Vec<f64>,
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Top `k` passages by similarity, ties by ascending passage id. Under
    /// cosine, zero vectors (empty texts) never match.
    pub fn search(&self, query: &[f64], k: usize) -> Vec<(PassageId, f64)> {
        let mut scored: Vec<(PassageId, f64)> = (0..self.len())
            .filter_map(|i| similarity(query, self.vector(i), self.sim).ok().map(|s| (self.ids[i], s)))
            .collect();
        sort_ranked(&mut scored);
        scored.truncate(k);
        scored
    }
}

/// Descending score, ascending id.
pub fn sort_ranked(scored: &mut [(PassageId, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}
