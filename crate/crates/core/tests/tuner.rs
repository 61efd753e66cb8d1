mod common;

use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use ssd_autotune::confdb::ConfDb;
use ssd_autotune::paramspace::ParamSpace;
use ssd_autotune::trace::{generate_synthetic_trace, IoRecord, Profile};
use ssd_autotune::tuner::gpr::{GprModel, GprOptions};
use ssd_autotune::tuner::*;

use common::*;

fn perf(l: f64, t: f64) -> Perf {
    Perf {
        latency_us: l,
        throughput_mbps: t,
    }
}

proptest! {
    #[test]
    fn common_rescaling_shifts_goals_uniformly(
        ms in prop::collection::vec((1e-3f64..1e6, 1e-3f64..1e6), 2..12),
        reference in (1e-3f64..1e6, 1e-3f64..1e6),
        (a, b) in (1e-3f64..1e3, 1e-3f64..1e3),
        alpha in 0.01f64..0.99,
    ) {
        let r = perf(reference.0, reference.1);
        let g: Vec<f64> = ms.iter().map(|&(l, t)| goal(perf(l, t), r, alpha).unwrap()).collect();
        let h: Vec<f64> = ms.iter().map(|&(l, t)| goal(perf(a * l, b * t), r, alpha).unwrap()).collect();
        let shift = (1.0 - alpha) * a.ln() - alpha * b.ln();
        for (x, y) in g.iter().zip(&h) {
            prop_assert!((y - x - shift).abs() <= 1e-9 * (1.0 + x.abs() + y.abs()));
        }
        let order = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            idx
        };
        let (og, oh) = (order(&g), order(&h));
        for w in og.windows(2) {
            // Ranking agrees wherever the gap exceeds rounding.
            if g[w[1]] - g[w[0]] > 1e-9 {
                prop_assert!(oh.iter().position(|&i| i == w[0]) < oh.iter().position(|&i| i == w[1]));
            }
        }
    }

    #[test]
    fn reference_and_zero_goals_are_neutral(
        l in 1e-3f64..1e6, t in 1e-3f64..1e6,
        alpha in 0.001f64..0.999, beta in 0.001f64..0.999, n in 1usize..8,
    ) {
        prop_assert_eq!(goal(perf(l, t), perf(l, t), alpha).unwrap(), 0.0);
        prop_assert_eq!(grade(0.0, &vec![0.0; n - 1], beta, n).unwrap(), 0.0);
    }

    #[test]
    fn posterior_std_at_training_points_is_within_noise(
        pts in prop::collection::btree_map((0u8..6, 0u8..6), -2.0f64..2.0, 3..15),
        seed in any::<u64>(),
    ) {
        let x: Vec<Vec<f64>> = pts.keys().map(|&(a, b)| vec![a as f64, b as f64]).collect();
        let y: Vec<f64> = pts.values().copied().collect();
        let m = GprModel::fit(&x, &y, &GprOptions { restarts: 2, seed, ..GprOptions::default() }).unwrap();
        for xi in &x {
            let p = m.predict(xi).unwrap();
            prop_assert!(p.std >= 0.0);
            prop_assert!(p.std <= m.noise_std() + 1e-6, "std {} noise {}", p.std, m.noise_std());
        }
    }
}

#[test]
fn predictions_vary_smoothly() {
    let f = |a: f64, b: f64| (0.6 * a).sin() + 0.2 * b - 0.05 * a * b;
    let x: Vec<Vec<f64>> = (0..36).map(|i| vec![(i % 6) as f64, (i / 6) as f64]).collect();
    let y: Vec<f64> = x.iter().map(|v| f(v[0], v[1])).collect();
    let m = GprModel::fit(&x, &y, &GprOptions::default()).unwrap();
    // Largest unit-step change of the target over the sampled grid.
    let mut lip = 0.0f64;
    for v in &x {
        lip = lip.max((f(v[0] + 1.0, v[1]) - f(v[0], v[1])).abs());
        lip = lip.max((f(v[0], v[1] + 1.0) - f(v[0], v[1])).abs());
    }
    for i in 0..10 {
        for j in 0..10 {
            let q = [i as f64 * 0.5, j as f64 * 0.5];
            let here = m.predict(&q).unwrap().mean;
            for d in [[1.0, 0.0], [0.0, 1.0]] {
                let there = m.predict(&[q[0] + d[0], q[1] + d[1]]).unwrap().mean;
                assert!((there - here).abs() <= 2.0 * lip, "step at {q:?}: {}", (there - here).abs());
            }
        }
    }
    assert!(m.predict(&[1.0]).is_err());
}

fn toy_state(space: &ParamSpace, settings: &TunerSettings) -> TunerState {
    let mut state = TunerState::new(settings.rng_seed);
    state.add(FnEvaluator(|c: &_| toy_grade(space, c)).evaluate(&space.lowest_config()).unwrap());
    state.refit(space, settings).unwrap();
    state
}

#[test]
fn repeated_steps_find_the_toy_optimum() {
    let (space, cons) = toy_space();
    let optimum = all_configs(&space)
        .iter()
        .map(|c| toy_grade(&space, c))
        .fold(f64::INFINITY, f64::min);
    let search = SearchSpace::all(&space, cons);
    let eval = FnEvaluator(|c: &_| toy_grade(&space, c));
    for seed in 0..3 {
        let settings = TunerSettings { rng_seed: seed, ..TunerSettings::default() };
        let mut state = toy_state(&space, &settings);
        let mut last_best = f64::INFINITY;
        for _ in 0..80 {
            search_step(&search, &mut state, &eval, &settings).unwrap();
            let best = state.best().unwrap().grade;
            assert!(best <= last_best);
            last_best = best;
            if best == optimum {
                break;
            }
        }
        assert_eq!(last_best, optimum, "seed {seed}");
    }
}

#[test]
fn zero_exploit_distance_stalls() {
    let (space, cons) = toy_space();
    let search = SearchSpace::all(&space, cons);
    let settings = TunerSettings { exploit_distance_max: 0.0, ..TunerSettings::default() };
    let mut state = toy_state(&space, &settings);
    let before = state.records.clone();
    let out = search_step(&search, &mut state, &FnEvaluator(|c: &_| toy_grade(&space, c)), &settings).unwrap();
    assert_eq!(out, StepOutcome::Stalled);
    assert!(state.stalled);
    assert_eq!(state.records, before);
}

#[test]
fn same_seed_and_state_give_same_step() {
    let (space, cons) = toy_space();
    let search = SearchSpace::all(&space, cons);
    let eval = FnEvaluator(|c: &_| toy_grade(&space, c));
    let settings = TunerSettings { rng_seed: 9, ..TunerSettings::default() };
    let mut a = toy_state(&space, &settings);
    for _ in 0..4 {
        search_step(&search, &mut a, &eval, &settings).unwrap();
    }
    let mut b = a.clone();
    for _ in 0..6 {
        let x = search_step(&search, &mut a, &eval, &settings).unwrap();
        let y = search_step(&search, &mut b, &eval, &settings).unwrap();
        assert_eq!(x, y);
    }
    assert_eq!(a.records, b.records);
}

#[test]
fn tune_trajectory_is_monotone_and_feasible() {
    let space = small_space();
    let base = small_config(&space, 1);
    let cons = constraints_for(&space, &base);
    let search = SearchSpace::all(&space, cons);
    let eval = FnEvaluator(|c: &_| {
        let v = space.vectorize(c);
        v.iter().enumerate().map(|(i, x)| ((i % 3) as f64 - x).powi(2)).sum::<f64>()
    });
    let settings = TunerSettings { max_outer_iterations: 25, min_outer_iterations: 5, ..TunerSettings::default() };
    let out = tune(&search, &eval, &[base], &settings).unwrap();
    assert!(out.best_trajectory.windows(2).all(|w| w[1] <= w[0]));
    assert!(out.history.iter().filter(|r| r.validated).all(|r| space.satisfies(&r.config, &cons)));
    assert_eq!(out.best.grade, out.history.iter().map(|r| r.grade).fold(f64::INFINITY, f64::min));
}

#[test]
fn relative_improvement_examples() {
    assert_eq!(relative_improvement(0.0, 0.0), 0.0);
    assert_eq!(relative_improvement(-1.0, -1.0), 0.0);
    assert!((relative_improvement(-0.010, -0.011) - 1.0 / 11.0).abs() < 1e-12);
    assert!(relative_improvement(-0.011, -0.010) < 0.0);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let dest = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &dest);
        } else {
            std::fs::copy(e.path(), dest).unwrap();
        }
    }
}

fn quick() -> TunerSettings {
    TunerSettings {
        max_outer_iterations: 6,
        min_outer_iterations: 3,
        gpr_restarts: 2,
        rng_seed: 4,
        ..TunerSettings::default()
    }
}

#[test]
fn tuning_is_reproducible_and_never_worse_than_reference() {
    let space = ParamSpace::default_catalog();
    let cons = nvme_512g();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("db");
    {
        let mut db = ConfDb::open(&root).unwrap();
        let corpus: Vec<(String, Vec<IoRecord>)> = [Profile::SeqRead, Profile::RandWrite]
            .iter()
            .map(|p| (p.name(), generate_synthetic_trace(*p, 4 * 3000, 1)))
            .collect();
        let labels: BTreeMap<String, String> = corpus.iter().map(|(n, _)| (n.clone(), n.clone())).collect();
        register_workloads(&mut db, &corpus, Some(&labels), 0).unwrap();
    }
    let copy = dir.path().join("copy");
    copy_dir(&root, &copy);

    let target = generate_synthetic_trace(Profile::SeqRead, 6000, 21);
    let mut a = ConfDb::open(&root).unwrap();
    let mut b = ConfDb::open(&copy).unwrap();
    let ra = tune_workload(&space, &target, &cons, &quick(), &mut a, None).unwrap();
    let rb = tune_workload(&space, &target, &cons, &quick(), &mut b, None).unwrap();
    assert_eq!(ra.outcome.best, rb.outcome.best);
    assert!(ra.outcome.best.grade <= ra.reference.grade);
    assert!(ra.outcome.history.iter().all(|r| space.satisfies(&r.config, &cons)));

    let entry = a.get(&ra.cluster_id).unwrap().unwrap();
    assert!(entry.prune_report.is_some());
    assert!(entry.records.len() >= ra.outcome.history.len());

    let mut buf = Vec::new();
    write_history(&mut buf, &ra.outcome.history).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let parsed: Vec<GradeRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, ra.outcome.history);
}

#[test]
fn settings_are_validated() {
    for bad in [
        TunerSettings { alpha: 1.0, ..TunerSettings::default() },
        TunerSettings { beta: 0.0, ..TunerSettings::default() },
        TunerSettings { top_set_size: 0, ..TunerSettings::default() },
        TunerSettings { exploit_distance_max: f64::NAN, ..TunerSettings::default() },
    ] {
        assert!(matches!(bad.validate(), Err(TunerError::InvalidSettings(_))));
    }
    assert_eq!(grade(0.0, &[0.0], 0.5, 3), Err(TunerError::LengthMismatch { expected: 2, got: 1 }));
}
