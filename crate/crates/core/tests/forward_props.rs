use std::collections::BTreeSet;

use mtcp::checks::random_instance;
use mtcp::forward::{evolve, evolve_between, evolve_single, Configuration, TypeKind};
use mtcp::graphical::sample_events;
use mtcp::oracle::{build_generator, marginal, transient_distribution};
use mtcp::sim::Simulator;
use mtcp::stats::Proportion;
use mtcp::topology::Topology;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn one_paths_stay_inside_two_paths(seed in any::<u64>(), frac in 0.0f64..=1.0, mask in any::<u16>()) {
        let inst = random_instance(seed).unwrap();
        let n = inst.topology.site_count();
        let a0: BTreeSet<usize> = (0..n).filter(|x| mask >> x & 1 == 1).collect();
        let t = inst.log.horizon() * frac;
        let one = evolve_single(&inst.topology, &inst.log, &a0, t, TypeKind::One).unwrap();
        let two = evolve_single(&inst.topology, &inst.log, &a0, t, TypeKind::Two).unwrap();
        prop_assert!(one.is_subset(&two));
    }

    #[test]
    fn absent_types_never_appear(seed in any::<u64>(), drop_type in 1u8..=2) {
        let inst = random_instance(seed).unwrap();
        let states = inst.xi0.states().iter().map(|&s| if s == drop_type { 0 } else { s }).collect();
        let xi0 = Configuration::from_states(states).unwrap();
        let xi = evolve(&inst.topology, &inst.log, &xi0, inst.t).unwrap();
        prop_assert!(xi.sites_with(drop_type).is_empty());
    }

    #[test]
    fn twos_alone_follow_the_two_paths(seed in any::<u64>(), mask in any::<u16>()) {
        let inst = random_instance(seed).unwrap();
        let n = inst.topology.site_count();
        let a0: BTreeSet<usize> = (0..n).filter(|x| mask >> x & 1 == 1).collect();
        let xi0 = Configuration::with_sites(n, a0.iter().copied(), 2).unwrap();
        let xi = evolve(&inst.topology, &inst.log, &xi0, inst.t).unwrap();
        let single = evolve_single(&inst.topology, &inst.log, &a0, inst.t, TypeKind::Two).unwrap();
        prop_assert_eq!(xi.twos(), single);
    }

    #[test]
    fn ones_alone_follow_one_paths_when_rates_agree(seed in any::<u64>(), lambda in 0.1f64..3.0, mask in any::<u16>()) {
        let topo = Topology::torus(1, 10).unwrap();
        let log = sample_events(&topo, lambda, lambda, 2.0, seed).unwrap();
        let a0: BTreeSet<usize> = (0..10).filter(|x| mask >> x & 1 == 1).collect();
        let xi0 = Configuration::with_sites(10, a0.iter().copied(), 1).unwrap();
        let xi = evolve(&topo, &log, &xi0, 2.0).unwrap();
        prop_assert_eq!(xi.ones(), evolve_single(&topo, &log, &a0, 2.0, TypeKind::One).unwrap());
    }

    #[test]
    fn restart_at_an_intermediate_time(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let inst = random_instance(seed).unwrap();
        let s = inst.t * frac;
        let mid = evolve(&inst.topology, &inst.log, &inst.xi0, s).unwrap();
        let direct = evolve(&inst.topology, &inst.log, &inst.xi0, inst.t).unwrap();
        prop_assert_eq!(evolve_between(&inst.topology, &inst.log, &mid, s, inst.t).unwrap(), direct);
    }
}

fn marginals_agree_with_oracle(sample: impl Fn(u64) -> Configuration, topo: &Topology, xi0: &Configuration, t: f64) {
    let (l1, l2) = (0.8, 1.6);
    let exact = transient_distribution(&build_generator(topo, l1, l2).unwrap(), xi0, t).unwrap();
    let replicas = 20_000u64;
    let samples: Vec<Configuration> = (0..replicas).map(&sample).collect();
    for x in 0..topo.site_count() {
        let table = marginal(&exact, &[x]).unwrap();
        for state in 0..3u8 {
            let p = table.get(&[state]);
            let hits = samples.iter().filter(|c| c.get(x) == state).count() as u64;
            let est = Proportion::new(hits, replicas).estimate;
            let se = (p * (1.0 - p) / replicas as f64).sqrt();
            assert!((est - p).abs() <= 4.0 * se + 1e-12, "site {x} state {state}: {est} vs {p}");
        }
    }
}

#[test]
fn log_based_marginals_match_the_oracle() {
    let topo = Topology::tree_ball(2, 1).unwrap();
    let xi0: Configuration = "1200".parse().unwrap();
    let sample = |s| {
        let log = sample_events(&topo, 0.8, 1.6, 1.0, s + 1).unwrap();
        evolve(&topo, &log, &xi0, 1.0).unwrap()
    };
    marginals_agree_with_oracle(sample, &topo, &xi0, 1.0);
}

#[test]
fn event_driven_sampler_matches_the_oracle() {
    let topo = Topology::path(4).unwrap();
    let xi0: Configuration = "2011".parse().unwrap();
    let sample = |s| {
        let mut sim = Simulator::new(&topo, 0.8, 1.6, &xi0, s).unwrap();
        sim.run_until(1.5);
        sim.configuration()
    };
    marginals_agree_with_oracle(sample, &topo, &xi0, 1.5);
}
