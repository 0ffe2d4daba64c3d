mod support;

use echo_cohort::dense::SimKind;
use echo_cohort::train::loss::{mnr_from_scores, MaskMode, Relevance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::{anchors_changed_by_swap, mlm_grad_error, mnr_grad_error, random_grad_case};

const MODES: [MaskMode; 3] = [MaskMode::AllOtherPositives, MaskMode::JudgedRelevantOnly, MaskMode::None];

#[test]
fn closed_forms() {
    let rel = Relevance::diagonal(1);
    let equal = mnr_from_scores(&[0.7, 0.7], &rel, MaskMode::AllOtherPositives.into()).unwrap();
    assert!((equal.loss - std::f64::consts::LN_2).abs() < 1e-9);
    let margin = mnr_from_scores(&[10.5, 0.5], &rel, MaskMode::AllOtherPositives.into()).unwrap();
    assert!((margin.loss - (1.0 + (-10f64).exp()).ln()).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mnr_gradient_matches_finite_differences(
        seed in any::<u64>(),
        n in prop::sample::select(vec![2usize, 4, 8]),
        d in prop::sample::select(vec![4usize, 8, 16]),
        mode in prop::sample::select(MODES.to_vec()),
        cosine in any::<bool>(),
        projection in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sim = if cosine { SimKind::Cosine } else { SimKind::Dot };
        let case = random_grad_case(&mut rng, n, d, mode, sim, projection);
        let err = mnr_grad_error(&case);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn mlm_gradient_matches_finite_differences(seed in any::<u64>(), d in prop::sample::select(vec![4usize, 8, 16]), batch in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = mlm_grad_error(&mut rng, d, batch);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn other_positives_do_not_leak_under_masking(seed in any::<u64>(), n in 2usize..8, cosine in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sim = if cosine { SimKind::Cosine } else { SimKind::Dot };
        let case = random_grad_case(&mut rng, n, 8, MaskMode::AllOtherPositives, sim, false);
        for j in 0..n {
            let replacement = vec![(j as u32 % 9) + 2, 3, 4];
            let moved = anchors_changed_by_swap(&case, j, replacement);
            prop_assert!(moved.is_empty(), "pair {j} moved anchors {moved:?}");
        }
    }
}

#[test]
fn unmasked_loss_sees_other_positives() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let case = random_grad_case(&mut rng, 4, 8, MaskMode::None, SimKind::Dot, false);
    assert!(!anchors_changed_by_swap(&case, 0, vec![5, 6, 7]).is_empty());
}
