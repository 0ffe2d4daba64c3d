//! Statement categorization, the subcategory inverted index, the
//! train/held-out/OOD split and relevance judgments.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ConditionCatalog, SubcategoryId};
use crate::corpus::{Corpus, PassageId};
use crate::error::{Error, Result};
use crate::parser::{normalize_statement, ParsedReport};
use crate::quantity::{parse_quantity_query, LvefDatabase, MatchSemantics, QuantityQuery};

/// Subcategories whose queries are only ever evaluated, never trained on.
pub const DEFAULT_EVAL_ONLY: [&str; 4] = [
    "hypokinesis-mild-moderate",
    "gradient-apical-present",
    "gradient-apical-absent",
    "thrombus-mural",
];

/// Exact-match lookup from normalized statement to subcategories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorizer {
    map: BTreeMap<String, Vec<SubcategoryId>>,
}

impl Categorizer {
    pub fn new(catalog: &ConditionCatalog) -> Self {
        Self {
            map: catalog.statement_map(),
        }
    }

    /// Unknown statements yield an empty list.
    pub fn categorize(&self, statement: &str) -> Vec<SubcategoryId> {
        self.map
            .get(&normalize_statement(statement))
            .cloned()
            .unwrap_or_default()
    }

    pub fn statements(&self) -> impl Iterator<Item = (&str, &[SubcategoryId])> {
        self.map.iter().map(|(s, ids)| (s.as_str(), ids.as_slice()))
    }
}

pub fn categorize(statement: &str, catalog: &ConditionCatalog) -> Vec<SubcategoryId> {
    Categorizer::new(catalog).categorize(statement)
}

/// Labels a parsed report by categorizing its LV statements and summary
/// sentences.
pub fn labels_of_parsed(parsed: &ParsedReport, categorizer: &Categorizer) -> BTreeSet<SubcategoryId> {
    parsed
        .lv_statements
        .iter()
        .chain(&parsed.summary_sentences)
        .flat_map(|s| categorizer.categorize(s))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    pub postings: BTreeMap<SubcategoryId, BTreeSet<PassageId>>,
    pub query_map: BTreeMap<String, Vec<SubcategoryId>>,
    pub passage_count: u32,
    pub ood_subcategories: BTreeSet<SubcategoryId>,
}

pub fn build_inverted_index(corpus: &Corpus, catalog: &ConditionCatalog) -> Result<InvertedIndex> {
    let mut postings: BTreeMap<SubcategoryId, BTreeSet<PassageId>> = catalog
        .subcategories()
        .map(|s| (s.id.clone(), BTreeSet::new()))
        .collect();
    for (pid, report) in corpus.reports.iter().enumerate() {
        for label in &report.labels {
            let posting = postings.get_mut(label).ok_or_else(|| {
                Error::Integrity(format!(
                    "report `{}` carries label `{label}` unknown to the catalog",
                    report.report_id
                ))
            })?;
            posting.insert(PassageId(pid as u32));
        }
    }
    let ood_subcategories = catalog
        .ood_conditions()
        .flat_map(|c| c.subcategories.iter().map(|s| s.id.clone()))
        .collect();
    Ok(InvertedIndex {
        postings,
        query_map: catalog.statement_map(),
        passage_count: corpus.len() as u32,
        ood_subcategories,
    })
}

impl InvertedIndex {
    pub fn posting(&self, id: &SubcategoryId) -> Option<&BTreeSet<PassageId>> {
        self.postings.get(id)
    }

    pub fn resolve(&self, query: &str) -> Option<&[SubcategoryId]> {
        self.query_map.get(&normalize_statement(query)).map(Vec::as_slice)
    }

    /// Passages carrying every subcategory in `ids`.
    pub fn relevant(&self, ids: &[SubcategoryId]) -> BTreeSet<PassageId> {
        let mut iter = ids.iter();
        let Some(first) = iter.next() else {
            return BTreeSet::new();
        };
        let mut acc = self.postings.get(first).cloned().unwrap_or_default();
        for id in iter {
            match self.postings.get(id) {
                Some(p) => acc.retain(|x| p.contains(x)),
                None => acc.clear(),
            }
        }
        acc
    }

    /// Reads labels back from the postings.
    pub fn labels(&self) -> Vec<BTreeSet<SubcategoryId>> {
        let mut out = vec![BTreeSet::new(); self.passage_count as usize];
        for (id, ps) in &self.postings {
            for p in ps {
                out[p.0 as usize].insert(id.clone());
            }
        }
        out
    }

    pub fn ood_passages(&self) -> BTreeSet<PassageId> {
        self.ood_subcategories
            .iter()
            .filter_map(|s| self.postings.get(s))
            .flatten()
            .copied()
            .collect()
    }

    pub fn passages_with_any(&self, ids: &BTreeSet<SubcategoryId>) -> BTreeSet<PassageId> {
        ids.iter()
            .filter_map(|s| self.postings.get(s))
            .flatten()
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub heldout_fraction: f64,
    pub seed: u64,
    pub eval_only_subcategories: BTreeSet<SubcategoryId>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            heldout_fraction: 0.21,
            seed: 42,
            eval_only_subcategories: DEFAULT_EVAL_ONLY.iter().map(|s| SubcategoryId::new(*s)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_passages: BTreeSet<PassageId>,
    pub heldout_passages: BTreeSet<PassageId>,
    /// OOD-labeled passages, used only by the OOD suite.
    pub quarantine_passages: BTreeSet<PassageId>,
    pub eval_only_subcategories: BTreeSet<SubcategoryId>,
    pub ood_conditions: BTreeSet<String>,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    /// Train passages that may appear in any training triplet: no
    /// eval-only subcategory label.
    pub fn training_pool(&self, index: &InvertedIndex) -> BTreeSet<PassageId> {
        let banned = index.passages_with_any(&self.eval_only_subcategories);
        self.train_passages.difference(&banned).copied().collect()
    }

    pub fn ood_universe(&self) -> BTreeSet<PassageId> {
        self.heldout_passages.union(&self.quarantine_passages).copied().collect()
    }
}

/// Splits passages by report. OOD-labeled passages go to quarantine; the
/// rest are shuffled under the seed and the first `heldout_fraction` of them
/// (rounded) are held out.
pub fn make_splits(index: &InvertedIndex, catalog: &ConditionCatalog, config: &SplitConfig) -> Result<SplitPlan> {
    let f = config.heldout_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("heldout_fraction must be in (0,1), got {f}")));
    }
    for s in &config.eval_only_subcategories {
        if catalog.subcategory(s.as_str()).is_none() {
            return Err(Error::Config(format!("eval-only subcategory `{s}` is not in the catalog")));
        }
    }
    let quarantine = index.ood_passages();
    let mut regular: Vec<PassageId> = (0..index.passage_count)
        .map(PassageId)
        .filter(|p| !quarantine.contains(p))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    regular.shuffle(&mut rng);
    let n_held = (f * regular.len() as f64).round() as usize;
    let heldout_passages = regular[..n_held].iter().copied().collect();
    let train_passages = regular[n_held..].iter().copied().collect();
    Ok(SplitPlan {
        train_passages,
        heldout_passages,
        quarantine_passages: quarantine,
        eval_only_subcategories: config.eval_only_subcategories.clone(),
        ood_conditions: catalog.ood_conditions().map(|c| c.name.clone()).collect(),
        heldout_fraction: f,
        seed: config.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryTarget {
    Subcategories { ids: Vec<SubcategoryId> },
    Quantity(QuantityQuery),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedQuery {
    pub query: String,
    pub target: QueryTarget,
    pub relevant: BTreeSet<PassageId>,
}

impl JudgedQuery {
    pub fn r(&self) -> usize {
        self.relevant.len()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Judgments {
    pub universe: BTreeSet<PassageId>,
    pub queries: Vec<JudgedQuery>,
}

/// Resolves a query to its target: catalog statements first, then the
/// LVEF query grammar.
pub fn resolve_query(query: &str, index: &InvertedIndex) -> Result<QueryTarget> {
    if let Some(ids) = index.resolve(query) {
        return Ok(QueryTarget::Subcategories { ids: ids.to_vec() });
    }
    parse_quantity_query(query)
        .map(QueryTarget::Quantity)
        .ok_or_else(|| Error::UnknownQuery(query.to_string()))
}

pub fn relevant_for(
    target: &QueryTarget,
    index: &InvertedIndex,
    lvef: Option<&LvefDatabase>,
    universe: &BTreeSet<PassageId>,
) -> Result<BTreeSet<PassageId>> {
    let all = match target {
        QueryTarget::Subcategories { ids } => index.relevant(ids),
        QueryTarget::Quantity(q) => lvef
            .ok_or_else(|| Error::Config("quantity query without an LVEF database".into()))?
            .matching(q, MatchSemantics::Strict),
    };
    Ok(all.intersection(universe).copied().collect())
}

/// Judgments for `queries` restricted to `universe`.
pub fn judgments_for<S: AsRef<str>>(
    queries: &[S],
    index: &InvertedIndex,
    lvef: Option<&LvefDatabase>,
    universe: &BTreeSet<PassageId>,
) -> Result<Judgments> {
    let mut judged = Vec::with_capacity(queries.len());
    for q in queries {
        let q = q.as_ref();
        let target = resolve_query(q, index)?;
        let relevant = relevant_for(&target, index, lvef, universe)?;
        judged.push(JudgedQuery {
            query: q.to_string(),
            target,
            relevant,
        });
    }
    Ok(Judgments {
        universe: universe.clone(),
        queries: judged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SyntheticReport;

    fn report(labels: &[&str]) -> SyntheticReport {
        SyntheticReport {
            report_id: "r".into(),
            findings_lv: vec![],
            summary: String::new(),
            labels: labels.iter().map(|s| SubcategoryId::new(*s)).collect(),
            lvef: None,
        }
    }

    #[test]
    fn categorize_examples() {
        let cat = ConditionCatalog::bundled();
        let ids = categorize("left ventricular wall thickness, cavity size, and systolic function are normal", &cat);
        assert_eq!(ids.len(), 3);
        let a = categorize("hyperdynamic lv systolic function", &cat);
        let b = categorize("left ventricular systolic function is hyperdynamic", &cat);
        assert_eq!(a, b);
        assert_eq!(a, [SubcategoryId::new("systolic-function-hyperdynamic")]);
        assert!(categorize("no such statement", &cat).is_empty());
    }

    #[test]
    fn postings_from_labels() {
        let cat = ConditionCatalog::bundled();
        let corpus = Corpus::new(vec![
            report(&["hypokinesis-mild"]),
            report(&["hypokinesis-mild", "thrombus-none"]),
            report(&["thrombus-none"]),
        ]);
        let idx = build_inverted_index(&corpus, &cat).unwrap();
        let ids = |v: &[u32]| v.iter().map(|&i| PassageId(i)).collect::<BTreeSet<_>>();
        assert_eq!(idx.postings[&SubcategoryId::new("hypokinesis-mild")], ids(&[0, 1]));
        assert_eq!(idx.postings[&SubcategoryId::new("thrombus-none")], ids(&[1, 2]));
        let back = idx.labels();
        assert_eq!(back[1], corpus.reports[1].labels);

        let bad = Corpus::new(vec![report(&["nope"])]);
        assert!(matches!(build_inverted_index(&bad, &cat), Err(Error::Integrity(_))));
        let empty = build_inverted_index(&Corpus::default(), &cat).unwrap();
        assert!(empty.postings.values().all(BTreeSet::is_empty));
    }

    #[test]
    fn split_examples() {
        let cat = ConditionCatalog::bundled();
        let mut reports: Vec<_> = (0..10).map(|_| report(&["hypokinesis-mild"])).collect();
        reports.extend((0..4).map(|_| report(&["ood-ebstein-anomaly"])));
        let idx = build_inverted_index(&Corpus::new(reports), &cat).unwrap();
        let cfg = SplitConfig { heldout_fraction: 0.5, ..SplitConfig::default() };
        let plan = make_splits(&idx, &cat, &cfg).unwrap();
        assert_eq!(plan.train_passages.len(), 5);
        assert_eq!(plan.heldout_passages.len(), 5);
        assert!(plan.train_passages.is_disjoint(&plan.heldout_passages));
        assert_eq!(plan.quarantine_passages, (10..14).map(PassageId).collect());
        for f in [0.0, 1.0, -0.2, f64::NAN] {
            let cfg = SplitConfig { heldout_fraction: f, ..SplitConfig::default() };
            assert!(matches!(make_splits(&idx, &cat, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn judgments_intersect_universe() {
        let cat = ConditionCatalog::bundled();
        let corpus = Corpus::new(vec![
            report(&["hypokinesis-mild"]),
            report(&["hypokinesis-mild"]),
            report(&["thrombus-mural"]),
        ]);
        let idx = build_inverted_index(&corpus, &cat).unwrap();
        let q = cat.subcategory("hypokinesis-mild").unwrap().variants[0].clone();
        let universe: BTreeSet<_> = [PassageId(1), PassageId(2)].into();
        let j = judgments_for(&[q.as_str()], &idx, None, &universe).unwrap();
        assert_eq!(j.queries[0].relevant, [PassageId(1)].into());
        assert!(matches!(
            judgments_for(&["no such statement"], &idx, None, &universe),
            Err(Error::UnknownQuery(_))
        ));
    }
}
