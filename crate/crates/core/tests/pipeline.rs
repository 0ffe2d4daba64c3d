mod support;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use echo_cohort::catalog::{ConditionCatalog, SubcategoryId};
use echo_cohort::cohort::QueryTarget;
use echo_cohort::eval::harness::{run_suite, Bm25Searcher, Searcher};
use echo_cohort::eval::suites::SuiteName;
use echo_cohort::parser::normalize_statement;
use echo_cohort::pipeline::{PipelineConfig, Prepared};
use echo_cohort::corpus::PassageId;
use echo_cohort::train::trainer::Variant;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn prepared() -> &'static (PipelineConfig, Prepared) {
    static P: OnceLock<(PipelineConfig, Prepared)> = OnceLock::new();
    P.get_or_init(|| {
        let config = PipelineConfig::default();
        let prep = Prepared::generate(ConditionCatalog::bundled(), &config).unwrap();
        (config, prep)
    })
}

#[test]
fn suites_have_documented_shapes() {
    let (_, prep) = prepared();
    let s = &prep.suites;
    let held = &prep.artifact.splits.heldout_passages;
    assert_eq!(s.paraphrased.queries.len(), 60);
    assert_eq!(s.numerical.queries.len(), 100);
    assert_eq!(&s.heldout.universe, held);
    assert_eq!(s.ood.universe, prep.artifact.splits.ood_universe());

    // every eval-only subcategory is queried in the held-out suite
    for id in &prep.artifact.splits.eval_only_subcategories {
        assert!(
            s.heldout.queries.iter().any(|q| matches!(&q.target, QueryTarget::Subcategories { ids } if ids.contains(id))),
            "{id}"
        );
    }

    // paraphrases are new surfaces carrying their original's judgments
    let index = &prep.artifact.index;
    for q in &s.paraphrased.queries {
        assert!(!index.query_map.contains_key(&normalize_statement(&q.query)), "{}", q.query);
        let QueryTarget::Subcategories { ids } = &q.target else { panic!("paraphrase of an LVEF query") };
        let want: BTreeSet<PassageId> = index.relevant(ids).intersection(held).copied().collect();
        assert_eq!(q.relevant, want);
        assert!(q.r() > 0);
    }

    for q in &s.numerical.queries {
        let QueryTarget::Quantity(qq) = &q.target else { panic!("numerical query without a quantity") };
        assert_eq!(q.relevant, support::brute_force_lvef(prep.corpus.subset(held), qq));
    }
}

struct Oracle<'a> {
    universe: BTreeSet<PassageId>,
    relevant: &'a dyn Fn(&str) -> BTreeSet<PassageId>,
    adversarial: bool,
}

impl Searcher for Oracle<'_> {
    fn universe(&self) -> &BTreeSet<PassageId> {
        &self.universe
    }

    fn search(&self, query: &str, k: usize) -> Vec<(PassageId, f64)> {
        let rel = (self.relevant)(query);
        let (first, second): (Vec<_>, Vec<_>) = if self.adversarial {
            (self.universe.difference(&rel).copied().collect(), rel.iter().copied().collect())
        } else {
            (rel.iter().copied().collect(), self.universe.difference(&rel).copied().collect())
        };
        let n = first.len() + second.len();
        first.into_iter().chain(second).take(k).enumerate().map(|(i, p)| (p, (n - i) as f64)).collect()
    }
}

#[test]
fn harness_bounds() {
    let (config, prep) = prepared();
    for name in SuiteName::ALL {
        let suite = prep.suites.get(name);
        let lookup = |q: &str| suite.queries.iter().find(|j| j.query == q).unwrap().relevant.clone();
        let best = Oracle { universe: suite.universe.clone(), relevant: &lookup, adversarial: false };
        let r = run_suite("oracle", &best, suite, 100).unwrap();
        assert_eq!((r.p_at_10 > 0.0, r.r_precision), (true, 1.0), "{name}");
        for q in r.per_query.iter().filter(|q| q.r >= 10) {
            assert_eq!(q.p_at_10, 1.0);
        }
        let worst = Oracle { universe: suite.universe.clone(), relevant: &lookup, adversarial: true };
        let r = run_suite("adversarial", &worst, suite, 100).unwrap();
        for q in &r.per_query {
            if suite.universe.len() - q.r >= 10 {
                assert_eq!(q.p_at_10, 0.0, "{name} {}", q.query);
            }
        }
    }
    // mismatched universe is a configuration error
    let bm25 = Bm25Searcher::new(&prep.corpus, &prep.artifact.splits.train_passages, config.bm25).unwrap();
    assert!(run_suite("bm25", &bm25, &prep.suites.heldout, 100).is_err());
}

#[test]
fn split_and_triplet_hygiene() {
    let catalog = ConditionCatalog::bundled();
    for seed in [1, 2, 3] {
        let bad = support::hygiene_audit(&catalog, 2000, seed, 20);
        assert!(bad.is_empty(), "{bad:#?}");
    }
}

#[test]
fn triplets_follow_sampling_rules() {
    let (config, prep) = prepared();
    let t = &prep.training;
    let catalog = &prep.catalog;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sibling_negatives = 0;
    for _ in 0..2000 {
        let tr = t.sample_triplet(&mut rng, 0.0).unwrap();
        assert!(t.is_relevant(&tr.target, tr.positive));
        assert!(!t.is_relevant(&tr.target, tr.negative));
        let sub = tr.anchor_subcategory.clone().unwrap();
        let cond = catalog.condition_of(sub.as_str()).unwrap();
        let siblings: BTreeSet<SubcategoryId> = cond.subcategories.iter().map(|s| s.id.clone()).filter(|s| *s != sub).collect();
        let neg_labels = &t.labels[&tr.negative];
        if siblings.is_empty() {
            let own: BTreeSet<_> = cond.subcategories.iter().map(|s| s.id.clone()).collect();
            assert!(neg_labels.is_disjoint(&own));
        } else if !neg_labels.is_disjoint(&siblings) {
            sibling_negatives += 1;
        }
    }
    assert!(sibling_negatives > 1000, "{sibling_negatives}");

    // LVEF triplets: matching positive, non-matching LVEF negative
    for _ in 0..500 {
        let tr = t.sample_lvef_triplet(&mut rng).unwrap();
        let QueryTarget::Quantity(q) = &tr.target else { panic!() };
        let m = |p: PassageId| echo_cohort::quantity::extract_lvef(prep.corpus.passage(p).unwrap());
        assert!(m(tr.positive).iter().any(|x| support::strict_holds(x.lo, x.hi, q)));
        let neg = m(tr.negative);
        assert!(!neg.is_empty() && !neg.iter().any(|x| support::strict_holds(x.lo, x.hi, q)));
    }

    // reproducible stream
    let a = t.sample_batch(32, true, &config.train.sampling, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = t.sample_batch(32, true, &config.train.sampling, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn v0_at_batch_16_beats_untrained() {
    let (config, prep) = prepared();
    let mut train = config.train.clone();
    train.batch_size = 16;
    let out = prep.train(Variant::V0, &train).unwrap();
    let suite = &prep.suites.heldout;
    let p10 = |params| {
        let enc = prep.dense("m", params, &train).unwrap();
        let s = echo_cohort::eval::harness::DenseSearcher::new(&enc.encoder, &prep.corpus, &suite.universe);
        run_suite("m", &s, suite, 100).unwrap().p_at_10
    };
    let trained = p10(out.params);
    let untrained = p10(prep.untrained(&train));
    assert!(trained > untrained, "trained {trained} vs untrained {untrained}");
}
