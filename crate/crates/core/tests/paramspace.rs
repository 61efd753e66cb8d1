mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use ssd_autotune::paramspace::*;

use common::*;

/// Neighbor oracle from the definition: one numeric index step, a boolean
/// flip, a categorical relabel, or a +1/-1 step on two coupled numerics.
fn is_neighbor(space: &ParamSpace, a: &Configuration, b: &Configuration) -> bool {
    let diffs: Vec<&ParamDef> = space
        .params()
        .iter()
        .filter(|p| a.get(&p.name) != b.get(&p.name))
        .collect();
    let step = |p: &ParamDef| b.get(&p.name).unwrap() as i64 - a.get(&p.name).unwrap() as i64;
    match diffs.as_slice() {
        [p] => match p.kind {
            ParamKind::Categorical { .. } | ParamKind::Boolean => true,
            _ => step(p).abs() == 1,
        },
        [p, q] => {
            p.capacity_coupled
                && q.capacity_coupled
                && p.kind.is_numeric()
                && q.kind.is_numeric()
                && step(p) * step(q) == -1
        }
        _ => false,
    }
}

#[test]
fn neighbors_match_brute_force_on_small_device() {
    let space = small_space();
    let configs = all_configs(&space);
    for base in [small_config(&space, 1), small_config(&space, 0), small_config(&space, 2)] {
        let cons = constraints_for(&space, &base);
        let got: HashSet<Configuration> = space.neighbors(&base, &cons).into_iter().collect();
        let want: HashSet<Configuration> = configs
            .iter()
            .filter(|c| space.satisfies(c, &cons) && is_neighbor(&space, &base, c))
            .cloned()
            .collect();
        assert_eq!(got, want);
        assert!(!got.contains(&base));
    }
}

#[test]
fn toy_neighbors_are_unit_steps() {
    let (space, cons) = toy_space();
    for c in all_configs(&space) {
        let n = space.neighbors(&c, &cons);
        let oracle = all_configs(&space)
            .into_iter()
            .filter(|d| space.manhattan(&c, d) == 1.0)
            .count();
        assert_eq!(n.len(), oracle);
        assert!(n.iter().all(|d| space.manhattan(&c, d) == 1.0));
    }
}

#[test]
fn vectorize_is_injective() {
    let space = small_space();
    let configs = all_configs(&space);
    let vecs: HashSet<Vec<u64>> = configs
        .iter()
        .map(|c| space.vectorize(c).iter().map(|x| x.to_bits()).collect())
        .collect();
    assert_eq!(vecs.len(), configs.len());

    let cat = ParamSpace::default_catalog();
    let r = cat.reference_config();
    let v = cat.vectorize(&r);
    assert_eq!(v.len(), cat.vector_len());
    for (name, cols) in cat.vector_columns() {
        if let Some(ParamKind::Categorical { .. }) = cat.param(&name).map(|p| &p.kind) {
            assert_eq!(v[cols].iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn capacity_examples() {
    let cat = ParamSpace::default_catalog();
    let r = cat.reference_config();
    assert!(cat.satisfies(&r, &nvme_512g()));
    let tib = Constraints::new(1 << 40, Interface::Nvme, FlashType::Mlc).unwrap();
    assert!(!cat.satisfies(&r, &tib));

    let space = small_space();
    let configs = all_configs(&space);
    let max = configs.iter().map(|c| space.raw_capacity(c)).max().unwrap();
    let loose = Constraints::with_tolerance(max, Interface::Nvme, FlashType::Mlc, 0.999).unwrap();
    assert!(configs.iter().all(|c| space.satisfies(c, &loose)));

    assert!(Constraints::with_tolerance(1, Interface::Nvme, FlashType::Mlc, 1.0).is_err());
    assert!(Constraints::new(0, Interface::Nvme, FlashType::Mlc).is_err());
}

#[test]
fn catalog_json_round_trips() {
    let cat = ParamSpace::default_catalog();
    assert_eq!(ParamSpace::from_json(&cat.to_json()).unwrap(), cat);
    assert_eq!(allocation_orderings().len(), 24);
}

#[test]
fn nearest_feasible_only_moves_coupled() {
    let cat = ParamSpace::default_catalog();
    let r = cat.reference_config();
    let tib = Constraints::new(1 << 40, Interface::Nvme, FlashType::Mlc).unwrap();
    let c = cat.nearest_feasible(&r, &tib).unwrap();
    assert!(cat.satisfies(&c, &tib));
    for p in cat.params().iter().filter(|p| !p.capacity_coupled) {
        assert_eq!(c.get(&p.name), r.get(&p.name));
    }
    assert_eq!(cat.nearest_feasible(&r, &nvme_512g()).unwrap(), r);
}

fn small_pair() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    let space = small_space();
    let levels: Vec<usize> = space.params().iter().map(|p| p.kind.levels()).collect();
    let one = levels.iter().map(|&l| 0..l).collect::<Vec<_>>();
    (one.clone(), one.clone(), one)
}

proptest! {
    #[test]
    fn manhattan_is_a_metric((a, b, c) in small_pair()) {
        let space = small_space();
        let (a, b, c) = (
            space.config_from_indices(&a).unwrap(),
            space.config_from_indices(&b).unwrap(),
            space.config_from_indices(&c).unwrap(),
        );
        prop_assert_eq!(space.manhattan(&a, &a), 0.0);
        prop_assert_eq!(space.manhattan(&a, &b), space.manhattan(&b, &a));
        prop_assert_eq!(space.manhattan(&a, &b) == 0.0, a == b);
        prop_assert!(space.manhattan(&a, &c) <= space.manhattan(&a, &b) + space.manhattan(&b, &c));
    }

    #[test]
    fn neighbors_are_feasible_and_exclude_input((a, _, _) in small_pair(), tol in 0.01f64..0.9) {
        let space = small_space();
        let a = space.config_from_indices(&a).unwrap();
        let cons = Constraints::with_tolerance(space.raw_capacity(&a), Interface::Sata, FlashType::Tlc, tol).unwrap();
        let n = space.neighbors(&a, &cons);
        prop_assert!(n.iter().all(|c| space.satisfies(c, &cons) && c != &a));
        let unique: HashSet<_> = n.iter().collect();
        prop_assert_eq!(unique.len(), n.len());
    }
}
