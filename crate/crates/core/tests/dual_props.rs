use std::collections::BTreeSet;

use mtcp::checks::{check_instance, random_instance};
use mtcp::dual::{duality_check, reachable_set, run_ancestors, PathKind};
use mtcp::forward::{evolve_single, Configuration, TypeKind};
use mtcp::graphical::sample_events;
use mtcp::stats::ks_two_sample;
use mtcp::topology::Topology;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn pathwise_identities(seed in any::<u64>()) {
        let inst = random_instance(seed).unwrap();
        let out = check_instance(&inst).unwrap();
        prop_assert!(out.duality, "duality failed for seed {}", seed);
        prop_assert!(out.support, "support identity failed for seed {}", seed);
        prop_assert!(out.marks, "mark identity failed for seed {}", seed);
        prop_assert!(out.coupling, "coupling failed for seed {}", seed);
    }

    #[test]
    fn empty_ancestor_lists_are_absorbing(seed in any::<u64>()) {
        let inst = random_instance(seed).unwrap();
        let dual = run_ancestors(&inst.topology, &inst.log, inst.x, inst.t).unwrap();
        let mut seen_empty = false;
        for k in 0..dual.jump_count() {
            let empty = dual.state(k).is_empty();
            prop_assert!(!(seen_empty && !empty));
            seen_empty |= empty;
        }
        prop_assert_eq!(dual.extinction_time().is_some(), seen_empty);
    }

    #[test]
    fn both_kind_is_the_union(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let inst = random_instance(seed).unwrap();
        let s = inst.t * frac;
        let get = |kind| reachable_set(&inst.topology, &inst.log, inst.x, inst.t, s, kind).unwrap();
        let union: BTreeSet<_> = get(PathKind::One).union(&get(PathKind::Two)).copied().collect();
        prop_assert_eq!(get(PathKind::Both), union);
    }

    #[test]
    fn duality_holds_for_any_start(seed in any::<u64>(), states in proptest::collection::vec(0u8..3, 12)) {
        let inst = random_instance(seed).unwrap();
        let n = inst.topology.site_count();
        let xi0 = Configuration::from_states(states[..n].to_vec()).unwrap();
        prop_assert!(duality_check(&inst.topology, &inst.log, &xi0, inst.x, inst.t).unwrap());
    }
}

#[test]
fn dual_support_has_the_forward_law() {
    let topo = Topology::torus(1, 30).unwrap();
    let (lambda, t, x) = (1.5, 4.0, 7);
    let logs = 10_000u64;
    let dual: Vec<f64> = (0..logs)
        .map(|s| {
            let log = sample_events(&topo, lambda, lambda, t, 2 * s).unwrap();
            reachable_set(&topo, &log, x, t, t / 2.0, PathKind::Both).unwrap().len() as f64
        })
        .collect();
    let forward: Vec<f64> = (0..logs)
        .map(|s| {
            let log = sample_events(&topo, lambda, lambda, t / 2.0, 2 * s + 1).unwrap();
            evolve_single(&topo, &log, &BTreeSet::from([x]), t / 2.0, TypeKind::Two).unwrap().len() as f64
        })
        .collect();
    let ks = ks_two_sample(&dual, &forward);
    assert!(ks.p_value > 1e-3, "{ks:?}");
}
