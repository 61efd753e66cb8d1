#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use ssd_autotune::clustering::{fit_pca, ClusterModel, ClusterRecord};
use ssd_autotune::confdb::{ClusterMeta, ConfDb, ConfDbEntry};
use ssd_autotune::paramspace::names::*;
use ssd_autotune::paramspace::{
    Configuration, Constraints, FlashType, Interface, ParamDef, ParamKind, ParamSpace,
};
use ssd_autotune::pruning::{PruneReport, PruneSettings};
use ssd_autotune::trace::{generate_synthetic_trace, IoRecord, Op, Profile, SECTOR_BYTES};
use ssd_autotune::tuner::{
    prune_workload, register_workloads, GradeRecord, Perf, REPRESENTATIVE_RECORDS,
};

pub fn def(name: &str, kind: ParamKind, coupled: bool) -> ParamDef {
    ParamDef {
        name: name.to_string(),
        kind,
        capacity_coupled: coupled,
        unit: String::new(),
    }
}

pub fn discrete(v: &[f64]) -> ParamKind {
    ParamKind::Discrete { values: v.to_vec() }
}

pub fn nvme_512g() -> Constraints {
    Constraints::new(512 << 30, Interface::Nvme, FlashType::Mlc).unwrap()
}

/// A 32-64 MiB device small enough for GC to run within a few thousand
/// writes.
pub fn small_space() -> ParamSpace {
    ParamSpace::new(vec![
        def(FLASH_CHANNEL_COUNT, discrete(&[1., 2., 4.]), true),
        def(CHIP_NO_PER_CHANNEL, discrete(&[1., 2.]), true),
        def(DIE_NO_PER_CHIP, discrete(&[1., 2.]), true),
        def(PLANE_NO_PER_DIE, discrete(&[1.]), true),
        def(BLOCK_NO_PER_PLANE, discrete(&[32., 64.]), true),
        def(PAGE_NO_PER_BLOCK, discrete(&[64.]), true),
        def(PAGE_SIZE, discrete(&[4096.]), true),
        def(DATA_CACHE_CAPACITY, discrete(&[64. * 4096., 256. * 4096., 1024. * 4096.]), false),
        def(CMT_CAPACITY, discrete(&[4096., 65536.]), false),
        def(OVERPROVISIONING_RATIO, discrete(&[0.1, 0.2, 0.3]), false),
        def(GREEDY_GC_ENABLED, ParamKind::Boolean, false),
    ])
    .unwrap()
}

/// Channels x 16 MiB per channel at one chip, die and the larger block count.
pub fn small_config(space: &ParamSpace, channels_idx: usize) -> Configuration {
    space
        .lowest_config()
        .with(FLASH_CHANNEL_COUNT, channels_idx)
        .with(BLOCK_NO_PER_PLANE, 1)
}

pub fn constraints_for(space: &ParamSpace, c: &Configuration) -> Constraints {
    Constraints::with_tolerance(space.raw_capacity(c), Interface::Nvme, FlashType::Mlc, 0.01)
        .unwrap()
}

pub fn write(ts_ns: u64, page: u64) -> IoRecord {
    IoRecord {
        timestamp_ns: ts_ns,
        device_id: 0,
        lba: page * 4096 / SECTOR_BYTES,
        size: 4096,
        op: Op::Write,
    }
}

pub fn read(ts_ns: u64, page: u64) -> IoRecord {
    IoRecord {
        op: Op::Read,
        ..write(ts_ns, page)
    }
}

/// Three-parameter toy space of 8 x 6 x 4 = 192 configurations, all feasible.
pub fn toy_space() -> (ParamSpace, Constraints) {
    let space = ParamSpace::new(vec![
        def("a", discrete(&[0., 1., 2., 3., 4., 5., 6., 7.]), false),
        def("b", discrete(&[0., 1., 2., 3., 4., 5.]), false),
        def("c", discrete(&[0., 1., 2., 3.]), false),
    ])
    .unwrap();
    let cons = Constraints::with_tolerance(1, Interface::Nvme, FlashType::Mlc, 0.5).unwrap();
    (space, cons)
}

/// Smooth bowl with a ridge and a local dip; unique global minimum.
pub fn toy_grade(space: &ParamSpace, c: &Configuration) -> f64 {
    let a = space.value(c, "a").unwrap();
    let b = space.value(c, "b").unwrap();
    let z = space.value(c, "c").unwrap();
    let bowl = 0.08 * (a - 5.0).powi(2) + 0.15 * (b - 2.0).powi(2) + 0.3 * (z - 1.0).powi(2);
    let coupling = 0.05 * (a - 5.0) * (b - 2.0);
    let dip = -0.4 * (-((a - 1.0).powi(2) + (b - 4.0).powi(2))).exp();
    1.0 + bowl + coupling + dip
}

pub fn all_configs(space: &ParamSpace) -> Vec<Configuration> {
    let levels: Vec<usize> = space.params().iter().map(|p| p.kind.levels()).collect();
    let total: usize = levels.iter().product();
    (0..total)
        .map(|mut k| {
            let idx: Vec<usize> = levels
                .iter()
                .map(|l| {
                    let i = k % l;
                    k /= l;
                    i
                })
                .collect();
            space.config_from_indices(&idx).unwrap()
        })
        .collect()
}

/// A store holding the five standard profiles, one cluster each, with a
/// prune report per cluster.
pub fn standard_db(root: &std::path::Path, constraints: &Constraints) -> ConfDb {
    let space = ParamSpace::default_catalog();
    let mut db = ConfDb::open(root).unwrap();
    let corpus: Vec<(String, Vec<IoRecord>)> = Profile::STANDARD
        .iter()
        .enumerate()
        .map(|(i, p)| (p.name(), generate_synthetic_trace(*p, 20 * 3000, i as u64)))
        .collect();
    let labels: BTreeMap<String, String> =
        corpus.iter().map(|(n, _)| (n.clone(), n.clone())).collect();
    register_workloads(&mut db, &corpus, Some(&labels), 0).unwrap();
    for (name, trace) in &corpus {
        let rep = &trace[..REPRESENTATIVE_RECORDS];
        let out = prune_workload(&space, rep, constraints, &PruneSettings::default(), &mut db, None)
            .unwrap();
        assert_eq!(&out.cluster_id, name);
    }
    db
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e12f64..1e12,
        -1.0f64..1.0,
        Just(0.0),
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
    ]
}

fn positive() -> impl Strategy<Value = f64> {
    prop_oneof![1e-9f64..1e9, any::<f64>().prop_filter("positive", |x| x.is_finite() && *x > 0.0)]
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z0-9][a-z0-9_-]{0,15}"
}

pub fn perf() -> impl Strategy<Value = Perf> {
    (positive(), positive()).prop_map(|(l, t)| Perf {
        latency_us: l,
        throughput_mbps: t,
    })
}

pub fn configuration() -> impl Strategy<Value = Configuration> {
    prop::collection::btree_map("[A-Za-z]{1,20}", 0usize..100_000, 0..20)
        .prop_map(|assignment| Configuration { assignment })
}

pub fn grade_record() -> impl Strategy<Value = GradeRecord> {
    (
        0usize..1000,
        configuration(),
        prop::collection::btree_map(ident(), perf(), 0..6),
        prop::collection::btree_map(ident(), finite(), 0..6),
        finite(),
        any::<bool>(),
    )
        .prop_map(|(iteration, config, per_workload, goal_per_workload, grade, validated)| {
            GradeRecord {
                iteration,
                config,
                per_workload,
                goal_per_workload,
                grade,
                validated,
            }
        })
}

fn names() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[A-Za-z]{1,12}", 0..5)
}

pub fn prune_report() -> impl Strategy<Value = PruneReport> {
    (
        names(),
        prop::collection::btree_map("[A-Za-z]{1,12}", finite(), 0..6),
        names(),
        names(),
        names(),
        prop::collection::vec(".{0,30}", 0..3),
    )
        .prop_map(|(insensitive_coarse, coefficients, dropped_fine, surviving, fixed, warnings)| {
            PruneReport {
                insensitive_coarse,
                coefficients,
                dropped_fine,
                surviving,
                fixed,
                warnings,
            }
        })
}

pub fn entry() -> impl Strategy<Value = ConfDbEntry> {
    (
        ident(),
        (finite(), finite(), finite(), 0usize..1_000_000, prop::option::of(".{0,20}")),
        prop::collection::btree_map(ident(), perf(), 0..5),
        prop::collection::vec(grade_record(), 0..4),
        prop::option::of(prune_report()),
    )
        .prop_map(|(cluster_id, (x, y, d, n, trace), reference_perf, records, prune_report)| {
            ConfDbEntry {
                cluster_id,
                cluster_meta: ClusterMeta {
                    center: [x, y],
                    mean_intra_distance: d,
                    member_count: n,
                    representative_trace: trace,
                },
                reference_perf,
                records,
                prune_report,
            }
        })
}

/// Small cluster model over random 3-d points.
pub fn cluster_model(seed: u64) -> ClusterModel {
    let pts: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let t = (i as f64 + seed as f64 * 0.37).sin();
            vec![t, (i as f64).cos(), i as f64 * 0.1]
        })
        .collect();
    ClusterModel {
        pca: fit_pca(&pts).unwrap(),
        clusters: vec![ClusterRecord {
            cluster_id: "c0".into(),
            center: [0.5, -0.25],
            mean_intra_distance: 0.1,
            member_count: 12,
            majority_label: Some("seqread".into()),
        }],
    }
}
