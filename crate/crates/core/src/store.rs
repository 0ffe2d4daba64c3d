//! On-disk artifacts.
//!
//! `echo-index v1` is text: the header line, `sha256 <hex>` of the body,
//! then one JSON document holding the inverted index, splits, BM25 index
//! and LVEF database.
//!
//! `echo-params v1` is mixed: the header line, a JSON metadata line, the
//! vocabulary one token per line, then `E` (and `W` when present) as
//! row-major little-endian `f32`. The metadata carries the sha256 of the
//! float block.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bm25::Bm25Index;
use crate::catalog::ConditionCatalog;
use crate::cohort::{InvertedIndex, SplitPlan};
use crate::corpus::Corpus;
use crate::dense::{EncoderConfig, EncoderParams, SimKind, Vocab};
use crate::error::{Error, Result};
use crate::quantity::LvefDatabase;

pub const INDEX_HEADER: &str = "echo-index v1";
pub const PARAMS_HEADER: &str = "echo-params v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexArtifact {
    pub catalog_version: String,
    pub catalog_hash: String,
    pub corpus_hash: String,
    pub index: InvertedIndex,
    pub splits: SplitPlan,
    pub bm25: Bm25Index,
    pub lvef: LvefDatabase,
}

impl IndexArtifact {
    /// Fails when the artifact was built from another catalog or corpus.
    pub fn check_against(&self, catalog: &ConditionCatalog, corpus: &Corpus) -> Result<()> {
        if self.catalog_hash != catalog.content_hash() {
            return Err(Error::Integrity("index was built from a different catalog".into()));
        }
        if self.corpus_hash != corpus.content_hash() {
            return Err(Error::Integrity("index was built from a different corpus".into()));
        }
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn index_to_string(artifact: &IndexArtifact) -> String {
    let body = serde_json::to_string(artifact).expect("index serializes");
    format!("{INDEX_HEADER}\nsha256 {}\n{body}\n", sha256_hex(body.as_bytes()))
}

pub fn index_from_str(text: &str) -> Result<IndexArtifact> {
    let mut parts = text.splitn(3, '\n');
    let header = parts.next().unwrap_or_default();
    if header != INDEX_HEADER {
        return Err(Error::Header {
            expected: INDEX_HEADER.into(),
            found: header.chars().take(40).collect(),
        });
    }
    let digest = parts
        .next()
        .and_then(|l| l.strip_prefix("sha256 "))
        .ok_or_else(|| corrupt("index", "missing checksum line"))?;
    let body = parts.next().ok_or_else(|| corrupt("index", "missing body"))?.trim_end_matches('\n');
    if sha256_hex(body.as_bytes()) != digest {
        return Err(corrupt("index", "checksum mismatch"));
    }
    serde_json::from_str(body).map_err(|e| corrupt("index", e.to_string()))
}

pub fn save_index(path: impl AsRef<Path>, artifact: &IndexArtifact) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, index_to_string(artifact)).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<IndexArtifact> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    index_from_str(&text)
}

fn corrupt(what: &'static str, message: impl Into<String>) -> Error {
    Error::Corrupt {
        what,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsMeta {
    dim: usize,
    vocab_size: usize,
    vocab_hash: String,
    sim: SimKind,
    max_len: usize,
    projection: bool,
    sha256: String,
}

/// Params loaded from disk together with what is needed to encode.
#[derive(Debug, Clone)]
pub struct ParamsArtifact {
    pub vocab: Vocab,
    pub params: EncoderParams,
    pub config: EncoderConfig,
}

fn push_f32(out: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

pub fn params_to_bytes(vocab: &Vocab, params: &EncoderParams, config: &EncoderConfig) -> Result<Vec<u8>> {
    params.check_shapes(config, vocab)?;
    let mut floats = Vec::with_capacity((params.e.len() + params.w.as_ref().map_or(0, Vec::len)) * 4);
    push_f32(&mut floats, &params.e);
    if let Some(w) = &params.w {
        push_f32(&mut floats, w);
    }
    let meta = ParamsMeta {
        dim: params.dim,
        vocab_size: params.vocab_size,
        vocab_hash: vocab.hash(),
        sim: config.sim,
        max_len: config.max_len,
        projection: params.w.is_some(),
        sha256: sha256_hex(&floats),
    };
    let mut out = Vec::new();
    writeln!(out, "{PARAMS_HEADER}").expect("vec write");
    writeln!(out, "{}", serde_json::to_string(&meta).expect("meta serializes")).expect("vec write");
    for t in vocab.tokens() {
        writeln!(out, "{t}").expect("vec write");
    }
    out.extend_from_slice(&floats);
    Ok(out)
}

pub fn params_from_reader(reader: impl Read) -> Result<ParamsArtifact> {
    let mut r = BufReader::new(reader);
    let mut line = String::new();
    let read_line = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| corrupt("params", e.to_string()))?;
        if n == 0 {
            return Err(corrupt("params", "unexpected end of file"));
        }
        if line.ends_with('\n') {
            line.pop();
        }
        Ok(())
    };
    read_line(&mut r, &mut line)?;
    if line != PARAMS_HEADER {
        return Err(Error::Header {
            expected: PARAMS_HEADER.into(),
            found: line.chars().take(40).collect(),
        });
    }
    read_line(&mut r, &mut line)?;
    let meta: ParamsMeta = serde_json::from_str(&line).map_err(|e| corrupt("params", e.to_string()))?;
    let mut tokens = Vec::with_capacity(meta.vocab_size);
    for _ in 0..meta.vocab_size {
        read_line(&mut r, &mut line)?;
        tokens.push(line.clone());
    }
    let vocab = Vocab::from_tokens(tokens)?;
    if vocab.hash() != meta.vocab_hash {
        return Err(corrupt("params", "vocabulary hash mismatch"));
    }
    let mut floats = Vec::new();
    r.read_to_end(&mut floats).map_err(|e| corrupt("params", e.to_string()))?;
    let d = meta.dim;
    let expected = (meta.vocab_size * d + if meta.projection { d * d } else { 0 }) * 4;
    if floats.len() != expected {
        return Err(corrupt("params", format!("expected {expected} float bytes, found {}", floats.len())));
    }
    if sha256_hex(&floats) != meta.sha256 {
        return Err(corrupt("params", "checksum mismatch"));
    }
    let values: Vec<f64> = floats
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let (e, w) = values.split_at(meta.vocab_size * d);
    let params = EncoderParams {
        dim: d,
        vocab_size: meta.vocab_size,
        e: e.to_vec(),
        w: meta.projection.then(|| w.to_vec()),
    };
    let config = EncoderConfig {
        dim: d,
        max_len: meta.max_len,
        sim: meta.sim,
        use_projection: meta.projection,
    };
    config.validate()?;
    params.check_shapes(&config, &vocab)?;
    if !params.is_finite() {
        return Err(corrupt("params", "non-finite weights"));
    }
    Ok(ParamsArtifact { vocab, params, config })
}

pub fn save_params(path: impl AsRef<Path>, vocab: &Vocab, params: &EncoderParams, config: &EncoderConfig) -> Result<()> {
    let path = path.as_ref();
    let bytes = params_to_bytes(vocab, params, config)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ParamsArtifact> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    params_from_reader(f)
}
