mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use chunkplan::profiles::{
    coarsen_graph, load_hardware_profile, load_model_profile, HardwareProfile, ModelProfile,
    OperatorNode, PrecisionSpec,
};
use chunkplan::rcache_sim::{oracle_min_misses, simulate_sequence, ReplacementPolicy};
use chunkplan::search::{build_plan, PlanOptions};

fn profile_from_seed(seed: u64) -> ModelProfile {
    common::random_profile(&mut ChaCha8Rng::seed_from_u64(seed), 12, 500)
}

/// Rebuilds a profile whose operators are exactly the coarse nodes of `trace`.
fn flatten(profile: &ModelProfile) -> ModelProfile {
    let trace = coarsen_graph(profile).unwrap();
    let mut operators: Vec<OperatorNode> = trace
        .coarse_ops
        .iter()
        .enumerate()
        .map(|(i, ids)| OperatorNode {
            name: format!("coarse{i}"),
            param_ids: ids.clone(),
            ac_group: None,
        })
        .collect();
    if let (Some(first), false) = (operators.first_mut(), trace.shared_param_ids.is_empty()) {
        first
            .param_ids
            .extend(trace.shared_param_ids.iter().cloned());
    }
    ModelProfile {
        operators,
        ..profile.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn coarsening_is_idempotent(seed in any::<u64>()) {
        let profile = profile_from_seed(seed);
        let once = coarsen_graph(&profile).unwrap();
        let twice = coarsen_graph(&flatten(&profile)).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn profile_json_round_trips(seed in any::<u64>()) {
        let profile = profile_from_seed(seed);
        let back = load_model_profile(&profile.to_json().unwrap()).unwrap();
        prop_assert_eq!(profile, back);
    }

    #[test]
    fn lru_never_beats_belady(seq in proptest::collection::vec(0usize..6, 1..40), n_block in 1usize..6) {
        let belady = simulate_sequence(&seq, n_block, ReplacementPolicy::Belady).unwrap();
        let lru = simulate_sequence(&seq, n_block, ReplacementPolicy::Lru).unwrap();
        prop_assert!(belady.misses <= lru.misses);
        prop_assert!(belady.refetches <= belady.misses);
    }

    #[test]
    fn belady_matches_oracle_at_the_limits(seq in proptest::collection::vec(0usize..8, 1..=20), n_block in 1usize..=8) {
        let belady = simulate_sequence(&seq, n_block, ReplacementPolicy::Belady).unwrap();
        prop_assert_eq!(belady.misses, oracle_min_misses(&seq, n_block).unwrap());
    }
}

#[test]
fn bundled_hardware_round_trips() {
    for hw in [HardwareProfile::dev_server(), HardwareProfile::aws_p4d()] {
        let back = load_hardware_profile(&hw.to_json().unwrap()).unwrap();
        assert_eq!(hw.gpu_capacity_bytes, back.gpu_capacity_bytes);
        for (n, rates) in &hw.tables {
            let other = back.rates(*n).unwrap();
            assert!((rates.b_c2g - other.b_c2g).abs() < 1e-3);
            assert_eq!(rates.b_g2g.is_some(), other.b_g2g.is_some());
        }
    }
}

#[test]
fn plans_are_deterministic_under_parallel_search() {
    let profile = profile_from_seed(7);
    let hw = HardwareProfile::dev_server().with_gpu_count(2).unwrap();
    let opts = PlanOptions {
        u_allowed: Some(40_000),
        grid_points: 24,
        ..Default::default()
    };
    let first = build_plan(&profile, &hw, PrecisionSpec::default(), &opts).unwrap();
    for _ in 0..5 {
        assert_eq!(
            build_plan(&profile, &hw, PrecisionSpec::default(), &opts).unwrap(),
            first
        );
    }
}
