mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use ssd_autotune::paramspace::names::*;
use ssd_autotune::paramspace::ParamSpace;
use ssd_autotune::pruning::*;
use ssd_autotune::simssd::SimResult;
use ssd_autotune::trace::{generate_synthetic_trace, Profile};

use common::*;

fn design() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64)> {
    (2usize..6, 6usize..30).prop_flat_map(|(p, n)| {
        (
            prop::collection::vec(prop::collection::vec(-3.0f64..3.0, p), n),
            prop::collection::vec(-5.0f64..5.0, n),
            0.0f64..0.5,
        )
    })
}

proptest! {
    #[test]
    fn lasso_objective_never_increases((x, y, lambda) in design()) {
        let (beta, history) = lasso_fit_traced(&x, &y, lambda).unwrap();
        prop_assert!(!history.is_empty());
        for w in history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        let last = *history.last().unwrap();
        prop_assert!((lasso_objective(&x, &y, &beta, lambda) - last).abs() <= 1e-9 * last.abs().max(1.0));
        prop_assert!(lasso_objective(&x, &y, &beta, lambda) <= lasso_objective(&x, &y, &vec![0.0; beta.len()], lambda) + 1e-12);
    }

    #[test]
    fn duplicated_samples_keep_the_decision(seed in 0u64..1000) {
        let space = ParamSpace::default_catalog();
        let base = space.reference_config();
        let names = vec![CMT_CAPACITY.to_string(), DATA_CACHE_CAPACITY.to_string(), PAGE_METADATA_SIZE.to_string()];
        let samples = planted(&space, &base, &names, seed);
        let once = fine_prune(&space, &samples, &names, 0.01, 0.01).unwrap();
        let twice: Vec<_> = samples.iter().chain(&samples).cloned().collect();
        let doubled = fine_prune(&space, &twice, &names, 0.01, 0.01).unwrap();
        prop_assert_eq!(once.surviving, doubled.surviving);
    }
}

/// Log-latency linear in the data-cache index with sigma = 0.01 noise;
/// log-throughput mirrors it.
fn planted(
    space: &ParamSpace,
    base: &ssd_autotune::paramspace::Configuration,
    names: &[String],
    seed: u64,
) -> Vec<(ssd_autotune::paramspace::Configuration, SimResult)> {
    let mut state = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut uniform = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    };
    let mut gauss = move || (-2.0 * uniform().ln()).sqrt() * (std::f64::consts::TAU * uniform()).cos();
    sample_configs(space, base, names, 40, seed)
        .into_iter()
        .map(|c| {
            let x = c.get(DATA_CACHE_CAPACITY).unwrap() as f64;
            let r = SimResult {
                mean_latency_us: (3.0 * x + 0.01 * gauss()).exp(),
                throughput_mbps: (-3.0 * x + 0.01 * gauss()).exp(),
                total_requests: 1,
                gc_invocations: 0,
            };
            (c, r)
        })
        .collect()
}

#[test]
fn planted_cache_driver_survives_noise_parameter_drops() {
    let space = ParamSpace::default_catalog();
    let base = space.reference_config();
    let names = vec![DATA_CACHE_CAPACITY.to_string(), CMT_CAPACITY.to_string()];
    for seed in 0..5 {
        let rep = fine_prune(&space, &planted(&space, &base, &names, seed), &names, 0.01, 0.01).unwrap();
        assert_eq!(rep.surviving, vec![DATA_CACHE_CAPACITY.to_string()], "{:?}", rep.coefficients);
        assert!(rep.coefficients[DATA_CACHE_CAPACITY] >= 0.01);
    }
}

#[test]
fn infinite_threshold_drops_everything() {
    let space = ParamSpace::default_catalog();
    let base = space.reference_config();
    let names = vec![DATA_CACHE_CAPACITY.to_string(), CMT_CAPACITY.to_string()];
    let rep = fine_prune(&space, &planted(&space, &base, &names, 1), &names, 0.01, f64::INFINITY).unwrap();
    assert!(rep.surviving.is_empty());
    assert_eq!(rep.dropped, names);
    assert!(matches!(
        fine_prune(&space, &planted(&space, &base, &names, 1)[..5], &names, 0.01, 0.01),
        Err(PruneError::TooFewSamples(5))
    ));
}

#[test]
fn unit_epsilon_marks_everything_insensitive() {
    let space = small_space();
    let base = small_config(&space, 1);
    let cons = constraints_for(&space, &base);
    let t: Vec<_> = (0..800).map(|i| if i % 3 == 0 { write(i * 20_000, i % 700) } else { read(i * 20_000, (i * 7) % 700) }).collect();
    let rep = coarse_prune(&space, &base, &cons, &t, &DEFAULT_MULTIPLIERS, 1.0, 0.1).unwrap();
    assert!(rep.sweeps.iter().all(|s| s.insensitive));
    assert_eq!(rep.insensitive().len(), rep.sweeps.len());
}

#[test]
fn channel_count_matters_for_sequential_reads() {
    let space = ParamSpace::default_catalog();
    let base = space.reference_config();
    let t = generate_synthetic_trace(Profile::SeqRead, 3000, 2);
    let rep = coarse_prune(&space, &base, &nvme_512g(), &t, &DEFAULT_MULTIPLIERS, DEFAULT_EPSILON, 0.1).unwrap();
    let ch = rep.sweeps.iter().find(|s| s.name == FLASH_CHANNEL_COUNT).unwrap();
    assert!(!ch.insensitive, "{ch:?}");
    assert!(rep.insensitive().contains(&PAGE_METADATA_SIZE.to_string()));
}

#[test]
fn report_partitions_the_catalog() {
    let space = small_space();
    let base = small_config(&space, 1);
    let cons = constraints_for(&space, &base);
    let t: Vec<_> = (0..1500).map(|i| if i % 2 == 0 { write(i * 15_000, (i * 13) % 2000) } else { read(i * 15_000, (i * 5) % 2000) }).collect();
    let rep = prune(&space, &base, &cons, &t, &PruneSettings::default()).unwrap();
    let parts = [&rep.insensitive_coarse, &rep.dropped_fine, &rep.surviving, &rep.fixed];
    let total: usize = parts.iter().map(|p| p.len()).sum();
    let union: BTreeSet<&String> = parts.iter().flat_map(|p| p.iter()).collect();
    let all: BTreeSet<&String> = space.params().iter().map(|p| &p.name).collect();
    assert_eq!(total, union.len());
    assert_eq!(union, all);
    for p in space.params().iter().filter(|p| p.capacity_coupled) {
        assert!(rep.fixed.contains(&p.name));
    }
    let searchable: BTreeSet<String> = rep.searchable().into_iter().collect();
    let frozen: BTreeSet<String> = rep.frozen().into_iter().collect();
    assert!(searchable.is_disjoint(&frozen));
    assert_eq!(searchable.len() + frozen.len(), all.len());
    assert_eq!(prune(&space, &base, &cons, &t, &PruneSettings::default()).unwrap(), rep);
}

#[test]
fn infeasible_baseline_is_rejected() {
    let space = small_space();
    let cons = constraints_for(&space, &small_config(&space, 1));
    let t = vec![read(0, 1)];
    assert!(matches!(
        coarse_prune(&space, &small_config(&space, 2), &cons, &t, &DEFAULT_MULTIPLIERS, 0.01, 0.1),
        Err(PruneError::InfeasibleBaseline)
    ));
}
