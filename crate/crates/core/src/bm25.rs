//! Okapi BM25 over the shared tokenizer.
//!
//! `idf(t) = max(0, ln((N - df + 0.5) / (df + 0.5) + 1))` and, for each
//! distinct query term,
//! `tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len)) * idf`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::PassageId;
use crate::dense::sort_ranked;
use crate::error::{Error, Result};
use crate::tokenize::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub params: Bm25Params,
    pub ids: Vec<PassageId>,
    pub lengths: Vec<u32>,
    pub avg_len: f64,
    /// term -> (document position, term frequency), positions ascending.
    pub postings: BTreeMap<String, Vec<(u32, u32)>>,
}

impl Bm25Index {
    pub fn build<'a>(passages: impl IntoIterator<Item = (PassageId, &'a str)>, params: Bm25Params) -> Result<Self> {
        if !(params.k1 >= 0.0 && params.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be >= 0, got {}", params.k1)));
        }
        if !(0.0..=1.0).contains(&params.b) {
            return Err(Error::Config(format!("b must be in [0,1], got {}", params.b)));
        }
        let mut ids = Vec::new();
        let mut lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        for (pos, (id, text)) in passages.into_iter().enumerate() {
            let tokens = tokenize(text);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (t, n) in tf {
                postings.entry(t).or_default().push((pos as u32, n));
            }
            ids.push(id);
            lengths.push(tokens.len() as u32);
        }
        if ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let avg_len = lengths.iter().map(|&l| f64::from(l)).sum::<f64>() / lengths.len() as f64;
        Ok(Self {
            params,
            ids,
            lengths,
            avg_len,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.df(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln().max(0.0)
    }

    /// Ranked passages with at least one query term, descending score and
    /// ascending id on ties.
    pub fn search(&self, query: &str, k: usize) -> Vec<(PassageId, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for t in &terms {
            let Some(list) = self.postings.get(t) else {
                continue;
            };
            let idf = self.idf(t);
            for &(pos, tf) in list {
                let tf = f64::from(tf);
                let len = f64::from(self.lengths[pos as usize]);
                let norm = if self.avg_len > 0.0 { len / self.avg_len } else { 0.0 };
                let s = tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm)) * idf;
                *scores.entry(pos).or_default() += s;
            }
        }
        let mut ranked: Vec<(PassageId, f64)> = scores
            .into_iter()
            .map(|(pos, s)| (self.ids[pos as usize], s))
            .collect();
        sort_ranked(&mut ranked);
        ranked.truncate(k);
        ranked
    }
}
