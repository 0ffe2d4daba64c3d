//! Set-based retrieval metrics. Rankings are cut at `k`; a ranking shorter
//! than `k` counts its missing slots as non-relevant.

use std::collections::BTreeSet;

use crate::corpus::PassageId;

#[derive(Debug, Clone, Copy)]
pub struct EvalInput<'a> {
    pub ranked: &'a [PassageId],
    pub judged: &'a BTreeSet<PassageId>,
}

impl<'a> EvalInput<'a> {
    pub fn new(ranked: &'a [PassageId], judged: &'a BTreeSet<PassageId>) -> Self {
        Self { ranked, judged }
    }

    pub fn r(&self) -> usize {
        self.judged.len()
    }

    /// Judged passages among the first `k` results.
    pub fn hits_at(&self, k: usize) -> usize {
        self.ranked.iter().take(k).filter(|p| self.judged.contains(p)).count()
    }

    pub fn precision_at(&self, k: usize) -> f64 {
        precision_at_k(self.ranked, self.judged, k)
    }

    pub fn r_precision(&self) -> Option<f64> {
        r_precision(self.ranked, self.judged)
    }
}

/// `|top_k ∩ judged| / k`.
pub fn precision_at_k(ranked: &[PassageId], judged: &BTreeSet<PassageId>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let hits = ranked.iter().take(k).filter(|p| judged.contains(p)).count();
    hits as f64 / k as f64
}

/// Precision at rank R = |judged|. `None` when nothing is relevant.
pub fn r_precision(ranked: &[PassageId], judged: &BTreeSet<PassageId>) -> Option<f64> {
    let r = judged.len();
    (r > 0).then(|| {
        let hits = ranked.iter().take(r).filter(|p| judged.contains(p)).count();
        hits as f64 / r as f64
    })
}
