mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ipu_segmentation_is_idempotent(d in arb_dialogue(), thr in 1i64..1000) {
        ipu_idempotence(&d, thr)?;
    }

    #[test]
    fn raising_threshold_never_adds_ipus(d in arb_dialogue(), a in 1i64..1000, b in 1i64..1000) {
        ipu_monotonicity(&d, a, b)?;
    }

    #[test]
    fn segmentation_conserves_tokens(d in arb_dialogue(), thr in 1i64..1000) {
        ipu_token_conservation(&d, thr)?;
    }

    #[test]
    fn subthreshold_split_keeps_ipu_count(
        d in arb_dialogue(),
        thr in 1i64..1000,
        pick in any::<usize>(),
        at in any::<i64>(),
    ) {
        ipu_subthreshold_split(&d, thr, pick, at)?;
    }

    #[test]
    fn features_ignore_time_shift(d in arb_dialogue(), offset in 0i64..1_000_000) {
        feature_time_shift(&d, offset)?;
    }

    #[test]
    fn rates_survive_self_concatenation(d in arb_dialogue()) {
        feature_self_concatenation(&d)?;
    }

    #[test]
    fn delaying_user_speech_shifts_switch_pause(d in arb_dialogue(), delay in 1i64..150) {
        feature_switch_pause_delay(&d, delay)?;
    }

    #[test]
    fn corpus_round_trips(ds in prop::collection::vec(arb_dialogue(), 1..4)) {
        corpus_round_trip(ds)?;
    }

    #[test]
    fn aggregate_ignores_item_order(items in prop::collection::vec(1.0f64..=7.0, 1..40), seed in any::<u64>()) {
        aggregate_permutation(&items, seed)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gbt_is_translation_equivariant(case in arb_gbt_case(4, 5..40, false), c in -50.0f64..50.0) {
        gbt_translation_equivariance(&case, c)?;
    }

    #[test]
    fn gbt_training_mse_is_monotone(case in arb_gbt_case(4, 5..40, true)) {
        gbt_mse_monotonicity(&case)?;
    }

    #[test]
    fn loocv_does_not_leak_held_out_target(case in arb_gbt_case(3, 4..12, false), planted in any::<usize>()) {
        loocv_leakage(&case, planted)?;
    }

    #[test]
    fn shapley_matches_naive_enumeration(case in arb_gbt_case(4, 6..30, false), i in any::<usize>()) {
        shapley_oracle(&case, i)?;
    }

    #[test]
    fn symmetric_features_share_attribution(case in arb_gbt_case(4, 6..30, false), i in any::<usize>()) {
        shapley_symmetry(&case, i)?;
    }

    #[test]
    fn attributions_are_linear_in_the_model(case in arb_gbt_case(4, 6..30, false), i in any::<usize>()) {
        shapley_linearity(&case, i)?;
    }

    #[test]
    fn unused_feature_gets_zero(case in arb_gbt_case(4, 6..30, false), col in any::<usize>(), i in any::<usize>()) {
        shapley_dummy(&case, col, i)?;
    }
}
