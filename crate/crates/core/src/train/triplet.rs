//! Triplet sampling over the training pool.
//!
//! Conditions are drawn uniformly, then two distinct subcategories: one
//! supplies the anchor statement and positive passage, the other the hard
//! negative. A condition with a single usable subcategory falls back to a
//! neutral negative that carries none of the condition's labels. LVEF
//! triplets render a sampled comparator query instead.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ConditionCatalog, SubcategoryId};
use crate::cohort::{InvertedIndex, QueryTarget, SplitPlan};
use crate::corpus::{Corpus, PassageId};
use crate::error::{Error, Result};
use crate::parser::normalize_statement;
use crate::quantity::{LvefDatabase, MatchSemantics, QuantityQuery, QuerySampler};
use crate::train::loss::Relevance;
use crate::train::paraphrase::{augment_paraphrase, ParaphraseTable};

const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor_query: String,
    pub target: QueryTarget,
    /// `None` for LVEF triplets.
    pub anchor_subcategory: Option<SubcategoryId>,
    pub positive: PassageId,
    pub negative: PassageId,
}

#[derive(Debug, Clone)]
struct Anchor {
    text: String,
    ids: Vec<SubcategoryId>,
    relevant: Vec<PassageId>,
}

#[derive(Debug, Clone)]
struct TrainSub {
    id: SubcategoryId,
    anchors: Vec<Anchor>,
    passages: Vec<PassageId>,
}

#[derive(Debug, Clone)]
struct TrainCondition {
    subs: Vec<TrainSub>,
    labels: BTreeSet<SubcategoryId>,
}

/// A validation query with its judgments over the training pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationQuery {
    pub query: String,
    pub target: QueryTarget,
    pub relevant: BTreeSet<PassageId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    /// Share of every batch made of LVEF triplets (v1 and v2).
    pub lvef_fraction: f64,
    /// Probability of rewriting an anchor with the training paraphrase table.
    pub paraphrase_prob: f64,
    /// Share of anchor statements held aside for checkpoint selection.
    pub validation_fraction: f64,
    pub lvef_validation_queries: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            lvef_fraction: 0.25,
            paraphrase_prob: 0.0,
            validation_fraction: 0.1,
            lvef_validation_queries: 20,
        }
    }
}

/// Everything triplet sampling may touch. Built once per run from the
/// training pool; nothing outside the pool is reachable.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub pool: BTreeSet<PassageId>,
    pub labels: BTreeMap<PassageId, BTreeSet<SubcategoryId>>,
    pub lvef: LvefDatabase,
    /// Normalized query surfaces that training must never use as anchors.
    pub banned: BTreeSet<String>,
    pub validation: Vec<ValidationQuery>,
    conditions: Vec<TrainCondition>,
    lvef_pool: Vec<PassageId>,
    sampler: QuerySampler,
    paraphrases: ParaphraseTable,
}

impl TrainingSet {
    /// `banned` holds the surfaces of every evaluation query (raw text; it is
    /// normalized here).
    pub fn build<'a>(
        corpus: &Corpus,
        catalog: &ConditionCatalog,
        index: &InvertedIndex,
        plan: &SplitPlan,
        banned: impl IntoIterator<Item = &'a str>,
        config: &SamplingConfig,
        seed: u64,
    ) -> Result<Self> {
        let pool = plan.training_pool(index);
        if pool.is_empty() {
            return Err(Error::CannotGenerate {
                what: "training set",
                reason: "training pool is empty".into(),
            });
        }
        let mut banned: BTreeSet<String> = banned.into_iter().map(normalize_statement).collect();
        let labels: BTreeMap<PassageId, BTreeSet<SubcategoryId>> = pool
            .iter()
            .map(|p| (*p, corpus.report(*p).map(|r| r.labels.clone()).unwrap_or_default()))
            .collect();

        // Statement-level validation split, so a held-aside compound
        // statement is not an anchor under any of its subcategories.
        let mut statements: Vec<String> = Vec::new();
        for cond in catalog.conditions.iter().filter(|c| !c.is_ood) {
            for sub in &cond.subcategories {
                if sub.is_quantity() || plan.eval_only_subcategories.contains(&sub.id) {
                    continue;
                }
                for v in &sub.variants {
                    let n = normalize_statement(v);
                    if !banned.contains(&n) && !statements.contains(&n) {
                        statements.push(n);
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        statements.shuffle(&mut rng);
        let n_val = ((config.validation_fraction * statements.len() as f64).round() as usize).min(statements.len());
        let held: BTreeSet<String> = statements[..n_val].iter().cloned().collect();

        let mut validation = Vec::new();
        for s in &statements[..n_val] {
            let ids = index.resolve(s).map(<[_]>::to_vec).unwrap_or_default();
            let relevant: BTreeSet<PassageId> = index.relevant(&ids).intersection(&pool).copied().collect();
            if !relevant.is_empty() {
                validation.push(ValidationQuery {
                    query: s.clone(),
                    target: QueryTarget::Subcategories { ids },
                    relevant,
                });
            }
        }

        let mut conditions = Vec::new();
        for cond in catalog.conditions.iter().filter(|c| !c.is_ood) {
            let mut subs = Vec::new();
            for sub in &cond.subcategories {
                if sub.is_quantity() || plan.eval_only_subcategories.contains(&sub.id) {
                    continue;
                }
                let passages: Vec<PassageId> = index
                    .posting(&sub.id)
                    .map(|p| p.intersection(&pool).copied().collect())
                    .unwrap_or_default();
                let mut anchors = Vec::new();
                for v in &sub.variants {
                    let n = normalize_statement(v);
                    if banned.contains(&n) || held.contains(&n) {
                        continue;
                    }
                    let ids = index.resolve(v).map(<[_]>::to_vec).unwrap_or_else(|| vec![sub.id.clone()]);
                    let relevant: Vec<PassageId> = index.relevant(&ids).intersection(&pool).copied().collect();
                    if !relevant.is_empty() {
                        anchors.push(Anchor {
                            text: v.clone(),
                            ids,
                            relevant,
                        });
                    }
                }
                subs.push(TrainSub {
                    id: sub.id.clone(),
                    anchors,
                    passages,
                });
            }
            if subs.iter().any(|s| !s.anchors.is_empty()) {
                let labels = cond.subcategories.iter().map(|s| s.id.clone()).collect();
                conditions.push(TrainCondition { subs, labels });
            }
        }
        if conditions.is_empty() {
            return Err(Error::CannotGenerate {
                what: "training set",
                reason: "no condition has an anchor with a relevant pool passage".into(),
            });
        }

        let lvef = LvefDatabase::build(corpus.subset(&pool));
        let lvef_pool: Vec<PassageId> = lvef.passages().collect();
        let sampler = QuerySampler::default();
        let mut lvef_validation = Vec::new();
        if !lvef.is_empty() {
            let mut seen = BTreeSet::new();
            for _ in 0..config.lvef_validation_queries * MAX_RETRIES {
                if lvef_validation.len() >= config.lvef_validation_queries {
                    break;
                }
                let q = sampler.sample(&mut rng);
                let key = normalize_statement(&q.surface);
                if banned.contains(&key) || !seen.insert(key) {
                    continue;
                }
                let relevant = lvef.matching(&q, MatchSemantics::Strict);
                if relevant.is_empty() {
                    continue;
                }
                lvef_validation.push(ValidationQuery {
                    query: q.surface.clone(),
                    target: QueryTarget::Quantity(q),
                    relevant,
                });
            }
        }
        for v in &lvef_validation {
            banned.insert(normalize_statement(&v.query));
        }
        validation.extend(lvef_validation);

        Ok(Self {
            pool,
            labels,
            lvef,
            banned,
            validation,
            conditions,
            lvef_pool,
            sampler,
            paraphrases: ParaphraseTable::bundled_train(),
        })
    }

    pub fn has_lvef(&self) -> bool {
        self.lvef_pool.len() >= 2
    }

    /// Condition names are not kept; this is the count of trainable ones.
    pub fn trainable_conditions(&self) -> usize {
        self.conditions.len()
    }

    /// Whether `passage` is judged relevant to `target`. Passages outside the
    /// pool are never relevant.
    pub fn is_relevant(&self, target: &QueryTarget, passage: PassageId) -> bool {
        match target {
            QueryTarget::Subcategories { ids } => self
                .labels
                .get(&passage)
                .is_some_and(|l| !ids.is_empty() && ids.iter().all(|id| l.contains(id))),
            QueryTarget::Quantity(q) => self.lvef.passage_matches(passage, q, MatchSemantics::Strict),
        }
    }

    pub fn sample_triplet<R: Rng>(&self, rng: &mut R, paraphrase_prob: f64) -> Result<Triplet> {
        for _ in 0..MAX_RETRIES {
            let cond = self.conditions.choose(rng).expect("non-empty");
            let with_anchors: Vec<&TrainSub> = cond.subs.iter().filter(|s| !s.anchors.is_empty()).collect();
            let pos_sub = *with_anchors.choose(rng).expect("trainable condition");
            let anchor = pos_sub.anchors.choose(rng).expect("non-empty anchors");
            let positive = *anchor.relevant.choose(rng).expect("non-empty relevant");
            let target = QueryTarget::Subcategories { ids: anchor.ids.clone() };

            let others: Vec<&TrainSub> = cond
                .subs
                .iter()
                .filter(|s| s.id != pos_sub.id && !s.passages.is_empty())
                .collect();
            let negative = if let Some(neg_sub) = others.choose(rng) {
                neg_sub
                    .passages
                    .iter()
                    .filter(|p| !self.is_relevant(&target, **p))
                    .choose(rng)
                    .copied()
            } else {
                self.neutral_negative(cond, rng)
            };
            let Some(negative) = negative else {
                continue;
            };
            let anchor_query = self.maybe_paraphrase(&anchor.text, paraphrase_prob, rng);
            return Ok(Triplet {
                anchor_query,
                target,
                anchor_subcategory: Some(pos_sub.id.clone()),
                positive,
                negative,
            });
        }
        Err(Error::CannotGenerate {
            what: "triplet",
            reason: format!("no valid negative after {MAX_RETRIES} attempts"),
        })
    }

    fn neutral_negative<R: Rng>(&self, cond: &TrainCondition, rng: &mut R) -> Option<PassageId> {
        for _ in 0..MAX_RETRIES {
            let p = *self.pool.iter().choose(rng)?;
            if self.labels.get(&p).is_some_and(|l| l.is_disjoint(&cond.labels)) {
                return Some(p);
            }
        }
        None
    }

    fn maybe_paraphrase<R: Rng>(&self, text: &str, prob: f64, rng: &mut R) -> String {
        if prob <= 0.0 || !rng.gen_bool(prob.min(1.0)) {
            return text.to_string();
        }
        let p = augment_paraphrase(text, &self.paraphrases, rng);
        if self.banned.contains(&normalize_statement(&p.text)) {
            text.to_string()
        } else {
            p.text
        }
    }

    /// An LVEF triplet: a rendered comparator query, a pool passage whose
    /// mention satisfies it and an LVEF passage whose mention does not.
    pub fn sample_lvef_triplet<R: Rng>(&self, rng: &mut R) -> Result<Triplet> {
        if !self.has_lvef() {
            return Err(Error::CannotGenerate {
                what: "LVEF triplet",
                reason: "training pool has fewer than two LVEF passages".into(),
            });
        }
        for _ in 0..MAX_RETRIES {
            let q: QuantityQuery = self.sampler.sample(rng);
            if self.banned.contains(&normalize_statement(&q.surface)) {
                continue;
            }
            let (pos, neg): (Vec<PassageId>, Vec<PassageId>) = self
                .lvef_pool
                .iter()
                .partition(|p| self.lvef.passage_matches(**p, &q, MatchSemantics::Strict));
            let (Some(&positive), Some(&negative)) = (pos.choose(rng), neg.choose(rng)) else {
                continue;
            };
            return Ok(Triplet {
                anchor_query: q.surface.clone(),
                target: QueryTarget::Quantity(q),
                anchor_subcategory: None,
                positive,
                negative,
            });
        }
        Err(Error::CannotGenerate {
            what: "LVEF triplet",
            reason: format!("no query with both outcomes after {MAX_RETRIES} attempts"),
        })
    }

    /// `n` triplets, of which `round(n * lvef_fraction)` are LVEF triplets
    /// when `lvef` is set and the pool allows it.
    pub fn sample_batch<R: Rng>(&self, n: usize, lvef: bool, config: &SamplingConfig, rng: &mut R) -> Result<Vec<Triplet>> {
        let n_lvef = if lvef && self.has_lvef() {
            ((n as f64 * config.lvef_fraction).round() as usize).min(n)
        } else {
            0
        };
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            out.push(if i < n_lvef {
                self.sample_lvef_triplet(rng)?
            } else {
                self.sample_triplet(rng, config.paraphrase_prob)?
            });
        }
        Ok(out)
    }

    /// `relevance[i][j]` for positives and negatives of a batch.
    pub fn relevance(&self, batch: &[Triplet]) -> Relevance {
        let n = batch.len();
        let mut positives = vec![false; n * n];
        let mut negatives = vec![false; n * n];
        for (i, a) in batch.iter().enumerate() {
            for (j, b) in batch.iter().enumerate() {
                positives[i * n + j] = i == j || self.is_relevant(&a.target, b.positive);
                negatives[i * n + j] = self.is_relevant(&a.target, b.negative);
            }
        }
        Relevance { n, positives, negatives }
    }
}
