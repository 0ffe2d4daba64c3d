//! Independent oracles shared by the integration tests and the acceptance
//! gate. Nothing here calls the code path it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::cohort::QueryTarget;
use echo_cohort::corpus::PassageId;
use echo_cohort::dense::{EncoderParams, SimKind};
use echo_cohort::parser::normalize_statement;
use echo_cohort::pipeline::{PipelineConfig, Prepared};
use echo_cohort::pretrain::{mlm_loss, MlmSample};
use echo_cohort::quantity::{extract_lvef, parse_quantity_query, QuantityQuery, Relation};
use echo_cohort::tokenize::tokenize;
use echo_cohort::train::loss::{mnr_loss, EncodedBatch, MaskConfig, MaskMode, Relevance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN_QUANTITY: &str = include_str!("../golden/quantity_cases.tsv");
pub const GOLDEN_BM25: &str = include_str!("../golden/bm25_toy.tsv");

// ---------------------------------------------------------------- gradients

/// `||a - f|| / max(||a||, ||f||)`, zero when both vanish.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, b)| a - b).collect();
    let scale = n(analytic).max(n(numeric));
    if scale < 1e-12 {
        0.0
    } else {
        n(&diff) / scale
    }
}

fn central_diff(x: &mut [f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let h = 1e-4;
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub struct GradCase {
    pub batch: EncodedBatch,
    pub params: EncoderParams,
    pub sim: SimKind,
    pub mask: MaskConfig,
}

fn random_ids(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<u32> {
    let len = rng.gen_range(1..=6);
    (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect()
}

/// A random batch of `n` pairs over a small vocabulary, with random extra
/// judgments so every mask mode has something to drop.
pub fn random_grad_case(rng: &mut ChaCha8Rng, n: usize, d: usize, mode: MaskMode, sim: SimKind, projection: bool) -> GradCase {
    let vocab = 12;
    let e: Vec<f64> = (0..vocab * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w = projection.then(|| {
        (0..d * d)
            .map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 } + rng.gen_range(-0.3..0.3))
            .collect()
    });
    let mut relevance = Relevance::diagonal(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                relevance.positives[i * n + j] = rng.gen_bool(0.3);
            }
            relevance.negatives[i * n + j] = rng.gen_bool(0.2);
        }
    }
    let batch = EncodedBatch {
        anchors: (0..n).map(|_| random_ids(rng, vocab)).collect(),
        positives: (0..n).map(|_| random_ids(rng, vocab)).collect(),
        negatives: (0..n).map(|_| random_ids(rng, vocab)).collect(),
        relevance,
    };
    GradCase {
        batch,
        params: EncoderParams {
            dim: d,
            vocab_size: vocab,
            e,
            w,
        },
        sim,
        mask: MaskConfig {
            mode,
            mask_judged_negatives: rng.gen_bool(0.5),
        },
    }
}

/// Relative error of the analytic MNR gradient against central differences,
/// over `e` and `w` together.
pub fn mnr_grad_error(case: &GradCase) -> f64 {
    let out = mnr_loss(&case.batch, &case.params, case.sim, case.mask).expect("loss");
    let mut analytic = out.grads.e.clone();
    if let Some(w) = &out.grads.w {
        analytic.extend(w);
    }
    let ne = case.params.e.len();
    let mut flat = case.params.e.clone();
    if let Some(w) = &case.params.w {
        flat.extend(w);
    }
    let numeric = central_diff(&mut flat, |x| {
        let mut p = case.params.clone();
        p.e.copy_from_slice(&x[..ne]);
        if let Some(w) = p.w.as_mut() {
            w.copy_from_slice(&x[ne..]);
        }
        mnr_loss(&case.batch, &p, case.sim, case.mask).expect("loss").loss
    });
    rel_error(&analytic, &numeric)
}

/// Relative error of the pretraining gradient for `e` and `o`.
pub fn mlm_grad_error(rng: &mut ChaCha8Rng, d: usize, batch: usize) -> f64 {
    let vocab = 10;
    let e: Vec<f64> = (0..vocab * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let o: Vec<f64> = (0..vocab * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let samples: Vec<MlmSample> = (0..batch)
        .map(|_| {
            let len = rng.gen_range(2..=7);
            let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(2..vocab as u32)).collect();
            let mut masked: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.3)).collect();
            masked[0] = true;
            masked[len - 1] = false;
            MlmSample { ids, masked }
        })
        .collect();
    let out = mlm_loss(&e, &o, d, &samples).expect("mlm loss");
    let mut analytic = out.e.clone();
    analytic.extend(&out.o);
    let mut flat = e.clone();
    flat.extend(&o);
    let ne = e.len();
    let numeric = central_diff(&mut flat, |x| mlm_loss(&x[..ne], &x[ne..], d, &samples).expect("mlm loss").loss);
    rel_error(&analytic, &numeric)
}

/// Replaces pair `j`'s positive and reports which anchors' loss terms moved
/// (bitwise).
pub fn anchors_changed_by_swap(case: &GradCase, j: usize, replacement: Vec<u32>) -> Vec<usize> {
    let before = mnr_loss(&case.batch, &case.params, case.sim, case.mask).expect("loss").per_anchor;
    let mut swapped = case.batch.clone();
    swapped.positives[j] = replacement;
    let after = mnr_loss(&swapped, &case.params, case.sim, case.mask).expect("loss").per_anchor;
    (0..before.len())
        .filter(|&i| i != j && before[i].to_bits() != after[i].to_bits())
        .collect()
}

// ------------------------------------------------------------------ metrics

/// P@k by scanning the universe: an item counts when it is judged and its
/// first position in the ranking is below `k`.
pub fn reference_precision(universe: &[u32], ranked: &[u32], judged: &BTreeSet<u32>, k: usize) -> f64 {
    let hits = universe
        .iter()
        .filter(|u| judged.contains(u) && ranked.iter().position(|r| r == *u).is_some_and(|p| p < k))
        .count();
    hits as f64 / k as f64
}

pub fn reference_r_precision(universe: &[u32], ranked: &[u32], judged: &BTreeSet<u32>) -> Option<f64> {
    let r = universe.iter().filter(|u| judged.contains(u)).count();
    (r > 0).then(|| reference_precision(universe, ranked, judged, r))
}

/// A random (universe, ranking, judgment) triple with universe size <= 30.
pub fn random_ranking(rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>, BTreeSet<u32>) {
    let n = rng.gen_range(1..=30u32);
    let universe: Vec<u32> = (0..n).collect();
    let mut ranked = universe.clone();
    for i in (1..ranked.len()).rev() {
        ranked.swap(i, rng.gen_range(0..=i));
    }
    ranked.truncate(rng.gen_range(0..=n as usize));
    let p = rng.gen_range(0.0..1.0);
    let judged = universe.iter().copied().filter(|_| rng.gen_bool(p)).collect();
    (universe, ranked, judged)
}

pub fn ids(v: &[u32]) -> Vec<PassageId> {
    v.iter().map(|&i| PassageId(i)).collect()
}

pub fn id_set(v: &BTreeSet<u32>) -> BTreeSet<PassageId> {
    v.iter().map(|&i| PassageId(i)).collect()
}

// --------------------------------------------------------------------- bm25

/// Okapi BM25 computed straight from the definition, document by document.
/// Returns every passage sharing a term with the query.
pub fn bm25_direct(docs: &[&str], query: &str, k1: f64, b: f64) -> BTreeMap<u32, f64> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    let mut out = BTreeMap::new();
    for (i, d) in toks.iter().enumerate() {
        let mut score = 0.0;
        let mut any = false;
        for t in &terms {
            let tf = d.iter().filter(|x| *x == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            any = true;
            let df = toks.iter().filter(|doc| doc.contains(t)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln().max(0.0);
            let norm = if avg > 0.0 { d.len() as f64 / avg } else { 0.0 };
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
        }
        if any {
            out.insert(i as u32, score);
        }
    }
    out
}

pub struct Bm25Golden {
    pub docs: Vec<String>,
    pub query: String,
    pub scores: BTreeMap<u32, f64>,
}

pub fn bm25_golden() -> Bm25Golden {
    let mut g = Bm25Golden {
        docs: Vec::new(),
        query: String::new(),
        scores: BTreeMap::new(),
    };
    for line in GOLDEN_BM25.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        match cols[0] {
            "doc" => g.docs.push(cols[2].to_string()),
            "query" => g.query = cols[1].to_string(),
            "score" => {
                g.scores.insert(cols[1].parse().unwrap(), cols[2].parse().unwrap());
            }
            other => panic!("bad golden row {other}"),
        }
    }
    g
}

// ----------------------------------------------------------------- quantity

/// The strict interval predicate written out independently.
pub fn strict_holds(lo: f64, hi: f64, q: &QuantityQuery) -> bool {
    match q.relation {
        Relation::Gt => lo > q.a,
        Relation::Ge => lo >= q.a,
        Relation::Lt => hi < q.a,
        Relation::Le => hi <= q.a,
        Relation::Eq => q.a >= lo && q.a <= hi,
        Relation::Range => lo >= q.a && hi <= q.b.expect("range end"),
    }
}

/// Relevant passages by re-reading every passage text in `universe`.
pub fn brute_force_lvef<'a>(passages: impl IntoIterator<Item = (PassageId, &'a str)>, q: &QuantityQuery) -> BTreeSet<PassageId> {
    passages
        .into_iter()
        .filter(|(_, text)| extract_lvef(text).iter().any(|m| strict_holds(m.lo, m.hi, q)))
        .map(|(id, _)| id)
        .collect()
}

fn render_query(q: &QuantityQuery) -> String {
    let code = match q.relation {
        Relation::Lt => "LT",
        Relation::Gt => "GT",
        Relation::Le => "LE",
        Relation::Ge => "GE",
        Relation::Eq => "EQ",
        Relation::Range => "RANGE",
    };
    match q.b {
        Some(b) => format!("{code} {} {}", q.a, b),
        None => format!("{code} {}", q.a),
    }
}

/// Runs every golden case and returns the failures.
pub fn quantity_golden_failures() -> (usize, Vec<String>) {
    let mut total = 0;
    let mut failures = Vec::new();
    for line in GOLDEN_QUANTITY.lines().filter(|l| !l.starts_with('#') && !l.is_empty()) {
        total += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        let (got, want) = match cols[0] {
            "mention" => {
                let ms = extract_lvef(cols[1]);
                let got = if ms.is_empty() {
                    "-".to_string()
                } else {
                    ms.iter().map(|m| format!("{}..{}", m.lo, m.hi)).collect::<Vec<_>>().join(";")
                };
                (got, cols[2])
            }
            "query" => (parse_quantity_query(cols[1]).map_or("-".to_string(), |q| render_query(&q)), cols[2]),
            "match" => {
                let q = parse_quantity_query(cols[2]).expect("golden match query parses");
                let hit = extract_lvef(cols[1]).iter().any(|m| echo_cohort::quantity::matches(m, &q));
                (hit.to_string(), cols[3])
            }
            other => panic!("bad golden kind {other}"),
        };
        if got != want {
            failures.push(format!("{line}: got {got}"));
        }
    }
    (total, failures)
}

// ------------------------------------------------------------------ hygiene

/// Builds a small pipeline with every seed set to `seed` and audits the
/// split and the sampled training triplets. Returns the violations.
pub fn hygiene_audit(catalog: &ConditionCatalog, reports: usize, seed: u64, batches: usize) -> Vec<String> {
    let mut config = PipelineConfig {
        reports,
        corpus_seed: seed,
        ..PipelineConfig::default()
    };
    config.split.seed = seed;
    config.train.seed = seed;
    let prep = match Prepared::generate(catalog.clone(), &config) {
        Ok(p) => p,
        Err(e) => return vec![format!("seed {seed}: pipeline failed: {e}")],
    };
    let mut bad = Vec::new();
    let splits = &prep.artifact.splits;

    // labels recomputed from the reports, not from the index
    let eval_only = &splits.eval_only_subcategories;
    let ood_ids: BTreeSet<_> = catalog.ood_conditions().flat_map(|c| c.subcategories.iter().map(|s| s.id.clone())).collect();
    let labels = |p: PassageId| &prep.corpus.reports[p.0 as usize].labels;

    if let Some(p) = splits.train_passages.intersection(&splits.heldout_passages).next() {
        bad.push(format!("seed {seed}: passage {p:?} in train and held-out"));
    }
    for &p in &splits.train_passages {
        if labels(p).iter().any(|l| ood_ids.contains(l)) {
            bad.push(format!("seed {seed}: OOD-labeled passage {p:?} in train split"));
        }
    }
    for &p in &prep.training.pool {
        if !splits.train_passages.contains(&p) {
            bad.push(format!("seed {seed}: pool passage {p:?} outside train split"));
        }
        if labels(p).iter().any(|l| eval_only.contains(l) || ood_ids.contains(l)) {
            bad.push(format!("seed {seed}: pool passage {p:?} carries an eval-only or OOD label"));
        }
    }
    let held_aside: BTreeSet<String> = prep
        .suites
        .eval_only_surfaces()
        .into_iter()
        .chain(prep.training.validation.iter().map(|v| v.query.as_str()))
        .map(normalize_statement)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..batches {
        let batch = match prep.training.sample_batch(32, true, &config.train.sampling, &mut rng) {
            Ok(b) => b,
            Err(e) => {
                bad.push(format!("seed {seed}: sampling failed: {e}"));
                break;
            }
        };
        for t in batch {
            for p in [t.positive, t.negative] {
                if !prep.training.pool.contains(&p) {
                    bad.push(format!("seed {seed}: triplet passage {p:?} outside the pool"));
                }
                if labels(p).iter().any(|l| eval_only.contains(l) || ood_ids.contains(l)) {
                    bad.push(format!("seed {seed}: triplet passage {p:?} has an eval-only or OOD label"));
                }
            }
            if let QueryTarget::Subcategories { ids } = &t.target {
                if ids.iter().any(|i| eval_only.contains(i) || ood_ids.contains(i)) {
                    bad.push(format!("seed {seed}: anchor `{}` targets an excluded subcategory", t.anchor_query));
                }
            }
            if held_aside.contains(&normalize_statement(&t.anchor_query)) {
                bad.push(format!("seed {seed}: anchor `{}` is an evaluation query", t.anchor_query));
            }
        }
    }
    bad
}
