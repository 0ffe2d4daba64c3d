//! Synthetic report corpus: generation from the catalog, token statistics
//! and the line-oriented corpus file.
//!
//! Each report draws two to five conditions, picks a subcategory and a
//! statement variant for each, and optionally adds an LVEF finding that
//! agrees with the systolic-function finding. The summary restates every
//! finding (sometimes with another variant of the same subcategories) and is
//! padded with unlabeled distractor sentences to a target length. The
//! summary is the retrieval passage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{ConditionCatalog, LvefTemplate, SubcategoryDef, SubcategoryId, FILE_HEADER};
use crate::error::{Error, Result};
use crate::parser::normalize_statement;
use crate::quantity::extract_lvef;

/// Index of a passage within its corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PassageId(pub u32);

impl fmt::Display for PassageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticReport {
    pub report_id: String,
    #[serde(rename = "findings")]
    pub findings_lv: Vec<String>,
    pub summary: String,
    pub labels: BTreeSet<SubcategoryId>,
    pub lvef: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub reports: Vec<SyntheticReport>,
}

impl Corpus {
    pub fn new(reports: Vec<SyntheticReport>) -> Self {
        Self { reports }
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    pub fn passage(&self, id: PassageId) -> Option<&str> {
        self.reports.get(id.0 as usize).map(|r| r.summary.as_str())
    }

    pub fn report(&self, id: PassageId) -> Option<&SyntheticReport> {
        self.reports.get(id.0 as usize)
    }

    pub fn passages(&self) -> impl Iterator<Item = (PassageId, &str)> {
        self.reports
            .iter()
            .enumerate()
            .map(|(i, r)| (PassageId(i as u32), r.summary.as_str()))
    }

    pub fn passage_ids(&self) -> BTreeSet<PassageId> {
        (0..self.reports.len() as u32).map(PassageId).collect()
    }

    /// Passages restricted to `ids`, in id order.
    pub fn subset<'a>(&'a self, ids: &'a BTreeSet<PassageId>) -> Vec<(PassageId, &'a str)> {
        ids.iter()
            .filter_map(|&id| self.passage(id).map(|t| (id, t)))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.reports.len() * 2048);
        out.push_str(FILE_HEADER);
        out.push('\n');
        for r in &self.reports {
            out.push_str(&serde_json::to_string(r).expect("report serializes"));
            out.push('\n');
        }
        out
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))[..16].to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io("<corpus>", e))?,
            None => String::new(),
        };
        if header.trim_end() != FILE_HEADER {
            return Err(Error::Header {
                expected: FILE_HEADER.into(),
                found: header,
            });
        }
        let mut reports = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<corpus>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SyntheticReport = serde_json::from_str(&line).map_err(|e| Error::Corrupt {
                what: "corpus record",
                message: format!("line {}: {e}", n + 2),
            })?;
            reports.push(r);
        }
        Ok(Self { reports })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Probability of drawing 2, 3, 4 or 5 conditions for a report.
    pub conditions_per_report: [f64; 4],
    pub lvef_prob: f64,
    /// Chance that the summary restates a finding with another variant.
    pub swap_prob: f64,
    pub summary_tokens_mean: f64,
    pub summary_tokens_std: f64,
    pub summary_tokens_min: usize,
    pub ood_max_per_condition: usize,
    /// One OOD occurrence per condition for every this many reports.
    pub ood_reports_per_occurrence: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            conditions_per_report: [0.35, 0.35, 0.2, 0.1],
            lvef_prob: 0.6,
            swap_prob: 0.3,
            summary_tokens_mean: 239.0,
            summary_tokens_std: 80.0,
            summary_tokens_min: 90,
            ood_max_per_condition: 9,
            ood_reports_per_occurrence: 400,
        }
    }
}

/// Which LVEF subcategory agrees with a systolic-function finding.
const LVEF_FOR_SYSTOLIC: &[(&str, &str)] = &[
    ("systolic-function-normal", "lvef-normal"),
    ("systolic-function-hyperdynamic", "lvef-normal"),
    ("systolic-function-mild", "lvef-mildly-reduced"),
    ("systolic-function-moderate", "lvef-moderately-reduced"),
    ("systolic-function-severe", "lvef-severely-reduced"),
];

struct Plan<'a> {
    catalog: &'a ConditionCatalog,
    /// For each variant string: the subcategories it expresses.
    ids_of_variant: BTreeMap<&'a str, Vec<&'a SubcategoryId>>,
    /// Variants grouped by the exact subcategory set they express.
    variants_by_ids: BTreeMap<Vec<&'a SubcategoryId>, Vec<&'a str>>,
    condition_of: BTreeMap<&'a SubcategoryId, usize>,
    lvef_subs: Vec<&'a SubcategoryDef>,
}

impl<'a> Plan<'a> {
    fn new(catalog: &'a ConditionCatalog) -> Self {
        let mut ids_of_variant: BTreeMap<&str, Vec<&SubcategoryId>> = BTreeMap::new();
        let mut condition_of = BTreeMap::new();
        for (ci, c) in catalog.conditions.iter().enumerate() {
            for s in &c.subcategories {
                condition_of.insert(&s.id, ci);
                if s.lvef_template.is_none() {
                    for v in &s.variants {
                        let e = ids_of_variant.entry(v.as_str()).or_default();
                        if !e.contains(&&s.id) {
                            e.push(&s.id);
                        }
                    }
                }
            }
        }
        let mut variants_by_ids: BTreeMap<Vec<&SubcategoryId>, Vec<&str>> = BTreeMap::new();
        for (v, ids) in ids_of_variant.iter_mut() {
            ids.sort();
            variants_by_ids.entry(ids.clone()).or_default().push(v);
        }
        let lvef_subs = catalog.subcategories().filter(|s| s.is_quantity()).collect();
        Self {
            catalog,
            ids_of_variant,
            variants_by_ids,
            condition_of,
            lvef_subs,
        }
    }
}

struct Finding {
    condition: usize,
    ids: Vec<SubcategoryId>,
    text: String,
    /// (index into the LVEF subcategories, variant, value) so the summary
    /// can re-render the same value with another variant.
    lvef: Option<(usize, usize, usize)>,
}

/// Generates `n_reports` reports, deterministic in `(catalog, n_reports, seed)`.
pub fn generate_corpus(catalog: &ConditionCatalog, n_reports: usize, seed: u64) -> Result<Corpus> {
    generate_corpus_with(catalog, n_reports, seed, &GeneratorConfig::default())
}

pub fn generate_corpus_with(
    catalog: &ConditionCatalog,
    n_reports: usize,
    seed: u64,
    config: &GeneratorConfig,
) -> Result<Corpus> {
    if n_reports == 0 {
        return Err(Error::EmptyCorpus);
    }
    let plan = Plan::new(catalog);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let regular: Vec<usize> = catalog
        .conditions
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_ood && c.weight > 0.0)
        .map(|(i, _)| i)
        .collect();
    if regular.is_empty() {
        return Err(Error::CannotGenerate {
            what: "corpus",
            reason: "catalog has no regular condition with positive weight".into(),
        });
    }

    // OOD placements are fixed up front so counts stay bounded.
    let mut ood_for_report: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let per_condition = n_reports
        .div_ceil(config.ood_reports_per_occurrence.max(1))
        .min(config.ood_max_per_condition)
        .min(n_reports);
    let mut order: Vec<usize> = (0..n_reports).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    for (ci, c) in catalog.conditions.iter().enumerate() {
        if !c.is_ood {
            continue;
        }
        let mut used = BTreeSet::new();
        while used.len() < per_condition {
            let r = order[cursor % n_reports];
            cursor += 1;
            if used.insert(r) {
                ood_for_report.entry(r).or_default().push(ci);
            }
        }
    }

    let k_dist = WeightedIndex::new(config.conditions_per_report).map_err(|e| Error::Config(e.to_string()))?;
    let mut reports = Vec::with_capacity(n_reports);
    for i in 0..n_reports {
        let k = (k_dist.sample(&mut rng) + 2).min(regular.len());
        let chosen = weighted_without_replacement(&mut rng, &regular, |ci| catalog.conditions[ci].weight, k);
        let mut findings = compose_findings(&plan, &mut rng, chosen);

        if rng.gen_bool(config.lvef_prob) && !plan.lvef_subs.is_empty() {
            findings.push(lvef_finding(&plan, &mut rng, &findings));
        }
        for &ci in ood_for_report.get(&i).map(Vec::as_slice).unwrap_or(&[]) {
            let sub = pick_subcategory(&mut rng, &catalog.conditions[ci].subcategories);
            let v = sub.variants.choose(&mut rng).expect("validated non-empty");
            findings.push(Finding {
                condition: ci,
                ids: vec![sub.id.clone()],
                text: v.clone(),
                lvef: None,
            });
        }
        findings.sort_by_key(|f| f.condition);

        let mut labels = BTreeSet::new();
        for f in &findings {
            labels.extend(f.ids.iter().cloned());
        }
        let findings_lv: Vec<String> = findings.iter().map(|f| f.text.clone()).collect();

        let mut sentences: Vec<String> = findings
            .iter()
            .map(|f| restate(&plan, &mut rng, f, config.swap_prob))
            .collect();
        let target = sample_target(&mut rng, config);
        let mut groups: Vec<usize> = (0..catalog.distractors.len()).collect();
        groups.shuffle(&mut rng);
        let mut tokens: usize = sentences.iter().map(|s| s.split_whitespace().count()).sum();
        for g in groups {
            if tokens >= target {
                break;
            }
            let s = catalog.distractors[g].sentences.choose(&mut rng).expect("validated non-empty");
            tokens += s.split_whitespace().count();
            sentences.push(s.clone());
        }
        let summary = sentences.join(" ");
        let lvef = extract_lvef(&summary).first().map(|m| [m.lo, m.hi]);

        reports.push(SyntheticReport {
            report_id: format!("echo-{:06}", i + 1),
            findings_lv,
            summary,
            labels,
            lvef,
        });
    }
    Ok(Corpus { reports })
}

fn sample_target<R: Rng>(rng: &mut R, config: &GeneratorConfig) -> usize {
    // Box-Muller; a full normal-distribution crate would be overkill here.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    let t = config.summary_tokens_mean + config.summary_tokens_std * z;
    t.max(config.summary_tokens_min as f64).round() as usize
}

fn weighted_without_replacement<R: Rng>(
    rng: &mut R,
    items: &[usize],
    weight: impl Fn(usize) -> f64,
    k: usize,
) -> Vec<usize> {
    let mut pool: Vec<usize> = items.to_vec();
    let mut out = Vec::with_capacity(k);
    while out.len() < k && !pool.is_empty() {
        let weights: Vec<f64> = pool.iter().map(|&i| weight(i)).collect();
        let idx = match WeightedIndex::new(&weights) {
            Ok(d) => d.sample(rng),
            Err(_) => rng.gen_range(0..pool.len()),
        };
        out.push(pool.swap_remove(idx));
    }
    out
}

fn pick_subcategory<'a, R: Rng>(rng: &mut R, subs: &'a [SubcategoryDef]) -> &'a SubcategoryDef {
    let weights: Vec<f64> = subs.iter().map(|s| s.weight).collect();
    match WeightedIndex::new(&weights) {
        Ok(d) => &subs[d.sample(rng)],
        Err(_) => subs.choose(rng).expect("validated non-empty"),
    }
}

fn compose_findings<R: Rng>(plan: &Plan<'_>, rng: &mut R, mut chosen: Vec<usize>) -> Vec<Finding> {
    chosen.sort();
    // condition index -> subcategory fixed so far
    let mut assigned: BTreeMap<usize, &SubcategoryId> = BTreeMap::new();
    let mut findings = Vec::new();
    for ci in chosen {
        if assigned.contains_key(&ci) {
            continue;
        }
        let sub = pick_subcategory(rng, &plan.catalog.conditions[ci].subcategories);
        let compatible: Vec<&str> = sub
            .variants
            .iter()
            .map(String::as_str)
            .filter(|v| {
                plan.ids_of_variant[v].iter().all(|id| {
                    let c = plan.condition_of[id];
                    assigned.get(&c).is_none_or(|a| *a == *id)
                })
            })
            .collect();
        let Some(&v) = compatible.choose(rng) else {
            continue;
        };
        let ids = &plan.ids_of_variant[v];
        for id in ids {
            assigned.insert(plan.condition_of[id], id);
        }
        findings.push(Finding {
            condition: ci,
            ids: ids.iter().map(|&i| i.clone()).collect(),
            text: v.to_string(),
            lvef: None,
        });
    }
    findings
}

fn lvef_finding<R: Rng>(plan: &Plan<'_>, rng: &mut R, findings: &[Finding]) -> Finding {
    let systolic = findings
        .iter()
        .flat_map(|f| f.ids.iter())
        .find_map(|id| LVEF_FOR_SYSTOLIC.iter().find(|(s, _)| *s == id.as_str()).map(|(_, l)| *l));
    let sub_idx = systolic
        .and_then(|l| plan.lvef_subs.iter().position(|s| s.id.as_str() == l))
        .unwrap_or_else(|| {
            let weights: Vec<f64> = plan.lvef_subs.iter().map(|s| s.weight).collect();
            match WeightedIndex::new(&weights) {
                Ok(d) => d.sample(rng),
                Err(_) => rng.gen_range(0..plan.lvef_subs.len()),
            }
        });
    let sub = plan.lvef_subs[sub_idx];
    let template = sub.lvef_template.as_ref().expect("quantity subcategory");
    let variant = rng.gen_range(0..sub.variants.len());
    let value = rng.gen_range(0..template.values.len());
    Finding {
        condition: plan.condition_of[&sub.id],
        ids: vec![sub.id.clone()],
        text: LvefTemplate::render(&sub.variants[variant], &template.values[value]),
        lvef: Some((sub_idx, variant, value)),
    }
}

fn restate<R: Rng>(plan: &Plan<'_>, rng: &mut R, f: &Finding, swap_prob: f64) -> String {
    if !rng.gen_bool(swap_prob) {
        return f.text.clone();
    }
    if let Some((sub_idx, variant, value)) = f.lvef {
        let sub = plan.lvef_subs[sub_idx];
        let template = sub.lvef_template.as_ref().expect("quantity subcategory");
        let others: Vec<usize> = (0..sub.variants.len()).filter(|&v| v != variant).collect();
        return match others.choose(rng) {
            Some(&v) => LvefTemplate::render(&sub.variants[v], &template.values[value]),
            None => f.text.clone(),
        };
    }
    let key: Vec<&SubcategoryId> = plan.ids_of_variant[f.text.as_str()].clone();
    let alternatives: Vec<&str> = plan.variants_by_ids[&key]
        .iter()
        .copied()
        .filter(|v| *v != f.text)
        .collect();
    alternatives
        .choose(rng)
        .map_or_else(|| f.text.clone(), |v| v.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: usize,
    pub max: usize,
}

/// Whitespace-token statistics; `std` is the population standard deviation.
pub fn token_stats<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<TokenStats> {
    let lens: Vec<usize> = texts.into_iter().map(|t| t.split_whitespace().count()).collect();
    if lens.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = lens.len() as f64;
    let mean = lens.iter().sum::<usize>() as f64 / n;
    let var = lens.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(TokenStats {
        count: lens.len(),
        mean,
        std: var.sqrt(),
        min: *lens.iter().min().expect("non-empty"),
        max: *lens.iter().max().expect("non-empty"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub passages: TokenStats,
    /// Over the distinct finding statements, which serve as queries.
    pub queries: TokenStats,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let passages = token_stats(corpus.reports.iter().map(|r| r.summary.as_str()))?;
    let mut seen = BTreeSet::new();
    let mut queries = Vec::new();
    for r in &corpus.reports {
        for f in &r.findings_lv {
            if seen.insert(normalize_statement(f)) {
                queries.push(f.as_str());
            }
        }
    }
    Ok(CorpusStats {
        passages,
        queries: token_stats(queries)?,
    })
}
