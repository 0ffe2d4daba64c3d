//! The four evaluation suites over held-out (and quarantined) passages.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::ConditionCatalog;
use crate::cohort::{InvertedIndex, JudgedQuery, QueryTarget, SplitPlan};
use crate::corpus::PassageId;
use crate::error::{Error, Result};
use crate::parser::normalize_statement;
use crate::quantity::{gen_lvef_eval_set, LvefDatabase, MatchSemantics};
use crate::train::paraphrase::{augment_paraphrase, ParaphraseTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteName {
    Heldout,
    Paraphrased,
    Numerical,
    Ood,
}

impl SuiteName {
    pub const ALL: [SuiteName; 4] = [SuiteName::Heldout, SuiteName::Paraphrased, SuiteName::Numerical, SuiteName::Ood];
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteName::Heldout => "heldout",
            SuiteName::Paraphrased => "paraphrased",
            SuiteName::Numerical => "numerical",
            SuiteName::Ood => "ood",
        })
    }
}

impl FromStr for SuiteName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SuiteName::ALL
            .into_iter()
            .find(|n| n.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub name: SuiteName,
    pub universe: BTreeSet<PassageId>,
    pub queries: Vec<JudgedQuery>,
}

impl SuiteSpec {
    pub fn answerable(&self) -> usize {
        self.queries.iter().filter(|q| q.r() > 0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub paraphrased_queries: usize,
    pub numerical_queries: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            paraphrased_queries: 60,
            numerical_queries: 100,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suites {
    pub heldout: SuiteSpec,
    pub paraphrased: SuiteSpec,
    pub numerical: SuiteSpec,
    pub ood: SuiteSpec,
}

impl Suites {
    pub fn get(&self, name: SuiteName) -> &SuiteSpec {
        match name {
            SuiteName::Heldout => &self.heldout,
            SuiteName::Paraphrased => &self.paraphrased,
            SuiteName::Numerical => &self.numerical,
            SuiteName::Ood => &self.ood,
        }
    }

    pub fn all(&self) -> [&SuiteSpec; 4] {
        [&self.heldout, &self.paraphrased, &self.numerical, &self.ood]
    }

    /// Query surfaces that were created for evaluation and must stay out of
    /// training: paraphrases and generated LVEF queries.
    pub fn eval_only_surfaces(&self) -> Vec<&str> {
        self.paraphrased
            .queries
            .iter()
            .chain(&self.numerical.queries)
            .map(|q| q.query.as_str())
            .collect()
    }
}

/// Each distinct normalized statement of `conditions`, as first written in
/// the catalog, with its subcategory targets.
fn catalog_queries<'a>(
    catalog: &'a ConditionCatalog,
    index: &InvertedIndex,
    ood: bool,
) -> Vec<(&'a str, Vec<crate::catalog::SubcategoryId>)> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for cond in catalog.conditions.iter().filter(|c| c.is_ood == ood) {
        for sub in cond.subcategories.iter().filter(|s| !s.is_quantity()) {
            for v in &sub.variants {
                if seen.insert(normalize_statement(v)) {
                    let ids = index.resolve(v).map(<[_]>::to_vec).unwrap_or_else(|| vec![sub.id.clone()]);
                    out.push((v.as_str(), ids));
                }
            }
        }
    }
    out
}

fn judge(
    queries: Vec<(&str, Vec<crate::catalog::SubcategoryId>)>,
    index: &InvertedIndex,
    universe: &BTreeSet<PassageId>,
) -> Vec<JudgedQuery> {
    queries
        .into_iter()
        .map(|(q, ids)| {
            let relevant = index.relevant(&ids).intersection(universe).copied().collect();
            JudgedQuery {
                query: q.to_string(),
                target: QueryTarget::Subcategories { ids },
                relevant,
            }
        })
        .collect()
}

pub fn build_suites(
    catalog: &ConditionCatalog,
    index: &InvertedIndex,
    plan: &SplitPlan,
    lvef: &LvefDatabase,
    rules: &ParaphraseTable,
    config: &SuiteConfig,
) -> Result<Suites> {
    let held = &plan.heldout_passages;
    for s in &plan.eval_only_subcategories {
        let present = index.posting(s).is_some_and(|p| !p.is_disjoint(held));
        if !present {
            return Err(Error::CannotGenerate {
                what: "heldout suite",
                reason: format!("eval-only subcategory `{s}` has no held-out passage"),
            });
        }
    }
    let heldout = SuiteSpec {
        name: SuiteName::Heldout,
        universe: held.clone(),
        queries: judge(catalog_queries(catalog, index, false), index, held),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut candidates: Vec<&JudgedQuery> = heldout
        .queries
        .iter()
        .filter(|q| q.r() > 0 && !rules.applicable(&q.query).is_empty())
        .collect();
    candidates.shuffle(&mut rng);
    let mut seen = BTreeSet::new();
    let mut para = Vec::with_capacity(config.paraphrased_queries);
    for q in candidates {
        if para.len() == config.paraphrased_queries {
            break;
        }
        let p = augment_paraphrase(&q.query, rules, &mut rng);
        let key = normalize_statement(&p.text);
        // a paraphrase that lands on another catalog statement is not new
        if !p.changed() || index.query_map.contains_key(&key) || !seen.insert(key) {
            continue;
        }
        para.push(JudgedQuery {
            query: p.text,
            target: q.target.clone(),
            relevant: q.relevant.clone(),
        });
    }
    if para.len() < config.paraphrased_queries {
        return Err(Error::CannotGenerate {
            what: "paraphrased suite",
            reason: format!("only {} of {} paraphrases available", para.len(), config.paraphrased_queries),
        });
    }
    let paraphrased = SuiteSpec {
        name: SuiteName::Paraphrased,
        universe: held.clone(),
        queries: para,
    };

    let set = gen_lvef_eval_set(lvef, held, config.numerical_queries, config.seed ^ 0x5eed, MatchSemantics::Strict)?;
    let numerical = SuiteSpec {
        name: SuiteName::Numerical,
        universe: held.clone(),
        queries: set.judgments.queries,
    };

    let ood_universe = plan.ood_universe();
    let ood = SuiteSpec {
        name: SuiteName::Ood,
        queries: judge(catalog_queries(catalog, index, true), index, &ood_universe),
        universe: ood_universe,
    };
    Ok(Suites {
        heldout,
        paraphrased,
        numerical,
        ood,
    })
}
