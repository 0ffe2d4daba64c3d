//! Acceptance gate: one PASS/FAIL line per criterion. Exits non-zero when
//! any criterion fails.

mod support;

use std::time::Instant;

use echo_cohort::catalog::ConditionCatalog;
use echo_cohort::cohort::QueryTarget;
use echo_cohort::corpus::PassageId;
use echo_cohort::dense::SimKind;
use echo_cohort::eval::metrics::{precision_at_k, r_precision};
use echo_cohort::eval::suites::SuiteName;
use echo_cohort::pipeline::{run_all, PipelineConfig, Prepared};
use echo_cohort::store::{index_to_string, params_to_bytes};
use echo_cohort::train::loss::{mnr_from_scores, MaskMode, Relevance};
use echo_cohort::train::trainer::Variant;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn loss_closed_forms() -> Outcome {
    let rel = Relevance::diagonal(1);
    let eq = mnr_from_scores(&[0.25, 0.25], &rel, MaskMode::AllOtherPositives.into()).map_err(|e| e.to_string())?;
    let margin = mnr_from_scores(&[10.0, 0.0], &rel, MaskMode::AllOtherPositives.into()).map_err(|e| e.to_string())?;
    let e1 = (eq.loss - std::f64::consts::LN_2).abs();
    let e2 = (margin.loss - (-10f64).exp().ln_1p()).abs();
    let detail = format!("|L - ln2| = {e1:.1e}, |L - ln(1+e^-10)| = {e2:.1e}");
    if e1 < 1e-9 && e2 < 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a4d);
    let mut worst = 0.0f64;
    let mut batches = 0;
    for mode in [MaskMode::AllOtherPositives, MaskMode::JudgedRelevantOnly, MaskMode::None] {
        for rep in 0..12 {
            for n in [2, 4, 8] {
                for d in [4, 8, 16] {
                    let sim = if rep % 2 == 0 { SimKind::Dot } else { SimKind::Cosine };
                    let case = support::random_grad_case(&mut rng, n, d, mode, sim, rep % 3 == 0);
                    worst = worst.max(support::mnr_grad_error(&case));
                    batches += 1;
                }
            }
        }
    }
    let mut worst_mlm = 0.0f64;
    for rep in 0..102 {
        let d = [4, 8, 16][rep % 3];
        let batch = rng.gen_range(1..6);
        worst_mlm = worst_mlm.max(support::mlm_grad_error(&mut rng, d, batch));
    }
    let detail = format!("{batches} ranking batches, max rel err {worst:.2e}; 102 pretraining batches, max rel err {worst_mlm:.2e}");
    if worst < 1e-4 && worst_mlm < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn masking_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3a5c);
    let mut swaps = 0;
    let mut none_changed = 0;
    for trial in 0..200 {
        let n = rng.gen_range(2..=8);
        let sim = if trial % 2 == 0 { SimKind::Dot } else { SimKind::Cosine };
        let masked = support::random_grad_case(&mut rng, n, 8, MaskMode::AllOtherPositives, sim, trial % 4 == 0);
        let j = rng.gen_range(0..n);
        let replacement: Vec<u32> = (0..rng.gen_range(1..6)).map(|_| rng.gen_range(2..12)).collect();
        let moved = support::anchors_changed_by_swap(&masked, j, replacement.clone());
        if !moved.is_empty() {
            return Err(format!("trial {trial}: swapping p_{j} moved anchors {moved:?}"));
        }
        swaps += 1;
        let mut plain = masked;
        plain.mask.mode = MaskMode::None;
        if !support::anchors_changed_by_swap(&plain, j, replacement).is_empty() {
            none_changed += 1;
        }
    }
    let detail = format!("{swaps} swaps bitwise invariant; NONE changed {none_changed} batches");
    if none_changed > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6e7a);
    let instances = 2000;
    for i in 0..instances {
        let (universe, ranked, judged) = support::random_ranking(&mut rng);
        let (r, j) = (support::ids(&ranked), support::id_set(&judged));
        for k in 1..=35 {
            if precision_at_k(&r, &j, k) != support::reference_precision(&universe, &ranked, &judged, k) {
                return Err(format!("instance {i}: P@{k} differs"));
            }
        }
        let rp = r_precision(&r, &j);
        if rp != support::reference_r_precision(&universe, &ranked, &judged) {
            return Err(format!("instance {i}: R-Precision differs"));
        }
        if let Some(rp) = rp {
            if rp != precision_at_k(&r, &j, judged.len()) {
                return Err(format!("instance {i}: R-Precision != P@R"));
            }
        }
    }
    Ok(format!("{instances} instances, k = 1..35, universe <= 30"))
}

fn quantity_golden(prep: &Prepared) -> Outcome {
    let (total, failures) = support::quantity_golden_failures();
    if total != 50 || !failures.is_empty() {
        return Err(format!("{total} cases, failures: {failures:?}"));
    }
    let suite = &prep.suites.numerical;
    let mut checked = 0;
    for q in &suite.queries {
        let QueryTarget::Quantity(qq) = &q.target else {
            return Err(format!("`{}` is not a quantity query", q.query));
        };
        if q.relevant != support::brute_force_lvef(prep.corpus.subset(&suite.universe), qq) {
            return Err(format!("`{}`: judgments differ from scan", q.query));
        }
        checked += 1;
    }
    if checked < 100 {
        return Err(format!("only {checked} numerical queries"));
    }
    Ok(format!("{total}/50 golden cases; {checked} numerical-suite judgments equal the scan"))
}

fn bm25_oracle() -> Outcome {
    use echo_cohort::bm25::{Bm25Index, Bm25Params};
    let g = support::bm25_golden();
    let build = |docs: &[&str], p| Bm25Index::build(docs.iter().enumerate().map(|(i, t)| (PassageId(i as u32), *t)), p);
    let docs: Vec<&str> = g.docs.iter().map(String::as_str).collect();
    let got = build(&docs, Bm25Params::default()).map_err(|e| e.to_string())?.search(&g.query, 10);
    if got.len() != g.scores.len() {
        return Err(format!("{} results, expected {}", got.len(), g.scores.len()));
    }
    let mut worst = 0.0f64;
    for (id, s) in &got {
        worst = worst.max((s - g.scores[&id.0]).abs());
    }
    if worst >= 1e-9 {
        return Err(format!("toy corpus max deviation {worst:.1e}"));
    }
    let words = ["severe", "mild", "hypokinesis", "apex", "lvef", "55%", "normal", "wall", "the", "of"];
    let mut rng = ChaCha8Rng::seed_from_u64(0xb325);
    let text = |rng: &mut ChaCha8Rng| (0..rng.gen_range(0..9)).map(|_| words[rng.gen_range(0..words.len())]).collect::<Vec<_>>().join(" ");
    let corpora = 500;
    for c in 0..corpora {
        let docs: Vec<String> = (0..rng.gen_range(1..=20)).map(|_| text(&mut rng)).collect();
        let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
        let query = text(&mut rng);
        let params = Bm25Params { k1: rng.gen_range(0.0..3.0), b: rng.gen_range(0.0..=1.0) };
        let got = build(&refs, params).map_err(|e| e.to_string())?.search(&query, usize::MAX);
        let want = support::bm25_direct(&refs, &query, params.k1, params.b);
        if got.len() != want.len() || got.iter().any(|(id, s)| (s - want[&id.0]).abs() >= 1e-9) {
            return Err(format!("random corpus {c} differs from the direct formula"));
        }
    }
    Ok(format!("toy max deviation {worst:.1e}; {corpora} random corpora (<= 20 passages) match the direct formula"))
}

fn split_hygiene(catalog: &ConditionCatalog) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5911);
    let seeds: Vec<u64> = (0..20).map(|_| rng.gen()).collect();
    for &seed in &seeds {
        let bad = support::hygiene_audit(catalog, 2000, seed, 20);
        if !bad.is_empty() {
            return Err(bad.join("; "));
        }
    }
    Ok(format!("{} seeds: splits disjoint, pool and 640 triplets per seed clean", seeds.len()))
}

struct E2e {
    a: Outcome,
    b: Outcome,
    c: Outcome,
}

fn end_to_end(prep: &Prepared, config: &PipelineConfig, started: Instant) -> E2e {
    let run = match run_all(prep, config, &Variant::ALL) {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("run failed: {e}");
            return E2e { a: Err(msg.clone()), b: Err(msg.clone()), c: Err(msg) };
        }
    };
    let secs = started.elapsed().as_secs_f64();
    print!("{}", run.table.render_text());
    let p10 = |m: &str, s| run.table.cell(m, s).map_or(f64::NAN, |c| c.p_at_10);
    let subcats = prep.catalog.subcategories().count();
    let scale = format!(
        "{} passages, {subcats} subcategories, d={}, {} steps, {secs:.0}s",
        prep.corpus.len(),
        config.train.encoder.dim,
        config.train.total_steps
    );
    let scale_ok = prep.corpus.len() == 2000 && subcats >= 40 && config.train.encoder.dim == 64 && config.train.total_steps <= 3000 && secs < 600.0;
    let verdict = |ok: bool, detail: String| if ok && scale_ok { Ok(detail) } else { Err(detail) };

    let (v0, un, bm) = (p10("dense:v0", SuiteName::Paraphrased), p10("untrained", SuiteName::Paraphrased), p10("bm25", SuiteName::Paraphrased));
    let a = verdict(v0 > un && v0 > bm, format!("paraphrased P@10 v0 {v0:.3} > untrained {un:.3}, > bm25 {bm:.3} ({scale})"));

    let (n1, n0) = (p10("dense:v1", SuiteName::Numerical), p10("dense:v0", SuiteName::Numerical));
    let b = verdict(n1 - n0 >= 0.3, format!("numerical P@10 v1 {n1:.3} - v0 {n0:.3} = {:.3} >= 0.3", n1 - n0));

    let bm_ood = p10("bm25", SuiteName::Ood);
    let dense_ood: Vec<String> = Variant::ALL.iter().map(|v| format!("{v} {:.3}", p10(&format!("dense:{v}"), SuiteName::Ood))).collect();
    let all_below = Variant::ALL.iter().all(|v| bm_ood > p10(&format!("dense:{v}"), SuiteName::Ood));
    let c = verdict(all_below, format!("OOD P@10 bm25 {bm_ood:.3} > {}", dense_ood.join(", ")));
    E2e { a, b, c }
}

/// Bytes of every artifact from one gen/index/train/eval run.
fn artifact_bytes(catalog: &ConditionCatalog, config: &PipelineConfig) -> echo_cohort::Result<Vec<(String, Vec<u8>)>> {
    let prep = Prepared::generate(catalog.clone(), config)?;
    let run = run_all(&prep, config, &Variant::ALL)?;
    let mut out = vec![
        ("corpus".to_string(), prep.corpus.to_text().into_bytes()),
        ("index".to_string(), index_to_string(&prep.artifact).into_bytes()),
        ("results.txt".to_string(), run.table.render_text().into_bytes()),
        ("results.jsonl".to_string(), run.table.to_jsonl().into_bytes()),
        ("per_query.jsonl".to_string(), run.table.per_query_jsonl().into_bytes()),
    ];
    for (v, t) in &run.trained {
        out.push((format!("params {v}"), params_to_bytes(&prep.vocab, &t.params, &config.train.encoder)?));
        out.push((format!("log {v}"), t.log.to_jsonl().into_bytes()));
    }
    Ok(out)
}

fn determinism(catalog: &ConditionCatalog) -> Outcome {
    let mut config = PipelineConfig::default();
    config.train.total_steps = 300;
    config.train.warmup_steps = 30;
    config.train.checkpoint_every = 100;
    config.train.pretrain.steps = 200;
    config.train.pretrain.warmup_steps = 20;
    let first = artifact_bytes(catalog, &config).map_err(|e| e.to_string())?;
    let second = artifact_bytes(catalog, &config).map_err(|e| e.to_string())?;
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        if a != b {
            return Err(format!("{name} differs between runs"));
        }
    }
    let bytes: usize = first.iter().map(|(_, b)| b.len()).sum();
    Ok(format!("{} artifacts ({bytes} bytes) identical across two runs (300 training steps)", first.len()))
}

fn main() {
    let started = Instant::now();
    let catalog = ConditionCatalog::bundled();
    let config = PipelineConfig::default();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("loss closed forms", loss_closed_forms()));
    results.push(("gradient oracle", gradient_oracle()));
    results.push(("masking invariance", masking_invariance()));
    results.push(("metric oracle", metric_oracle()));
    results.push(("bm25 oracle", bm25_oracle()));
    results.push(("split hygiene", split_hygiene(&catalog)));

    let e2e_start = Instant::now();
    match Prepared::generate(catalog.clone(), &config) {
        Ok(prep) => {
            results.push(("quantity golden", quantity_golden(&prep)));
            let e = end_to_end(&prep, &config, e2e_start);
            results.push(("e2e (a) v0 beats untrained and bm25 on paraphrased", e.a));
            results.push(("e2e (b) v1 beats v0 on numerical by 0.3", e.b));
            results.push(("e2e (c) bm25 beats dense on ood", e.c));
        }
        Err(e) => {
            for name in ["quantity golden", "e2e (a)", "e2e (b)", "e2e (c)"] {
                results.push((name, Err(format!("pipeline failed: {e}"))));
            }
        }
    }
    results.push(("determinism", determinism(&catalog)));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} passed, {failed} failed in {:.0}s", results.len() - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
