mod common;

use common::invariants::*;
use proptest::prelude::*;

fn run(check: fn(u64) -> Check, seed: u64) -> Result<(), TestCaseError> {
    check(seed).map_err(TestCaseError::fail)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn leaves_partition_the_space(seed in any::<u64>()) { run(partition_one_hot, seed)?; }

    #[test]
    fn columns_sum_to_horizon(seed in any::<u64>()) { run(column_sums, seed)?; }

    #[test]
    fn splits_conserve_counts(seed in any::<u64>()) { run(split_conservation, seed)?; }

    #[test]
    fn rss_never_rises_with_growth(seed in any::<u64>()) { run(rss_monotone, seed)?; }

    #[test]
    fn prune_picks_the_argmin(seed in any::<u64>()) { run(prune_argmin, seed)?; }

    #[test]
    fn loss_ignores_row_orientation(seed in any::<u64>()) { run(loss_orientation, seed)?; }

    #[test]
    fn preference_prob_is_symmetric(seed in any::<u64>()) { run(preference_symmetry, seed)?; }

    #[test]
    fn oracle_labels_are_symmetric(seed in any::<u64>()) { run(oracle_symmetry, seed)?; }

    #[test]
    fn phi_round_trips(seed in any::<u64>()) { run(phi_roundtrip, seed)?; }

    #[test]
    fn budget_and_connectivity_hold(seed in any::<u64>()) { run(budget_connectivity, seed)?; }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn replaying_the_label_log_is_bit_identical(seed in any::<u64>()) { run(replay_determinism, seed)?; }
}
