//! Exact pathwise checks on random small instances: duality, the support and
//! mark identities of the ancestor process, and the coupling order of the
//! two single-type processes.

use rand::Rng;

use crate::dual::{duality_check_with, reachable_set_down_to, run_ancestors, Mark, PathKind};
use crate::error::Result;
use crate::forward::Configuration;
use crate::graphical::{sample_events, EventKind, EventLog};
use crate::streams::stream_rng;
use crate::topology::{Site, Topology};

/// One random instance: a small graph, a log, an initial configuration and a
/// base point.
#[derive(Debug, Clone)]
pub struct Instance {
    pub topology: Topology,
    pub log: EventLog,
    pub xi0: Configuration,
    pub x: Site,
    pub t: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InstanceOutcome {
    pub duality: bool,
    pub support: bool,
    pub marks: bool,
    pub coupling: bool,
    pub jumps: usize,
}

impl InstanceOutcome {
    pub fn all_pass(&self) -> bool {
        self.duality && self.support && self.marks && self.coupling
    }
}

/// Draws an instance on a graph with at most 12 sites: rings of 3 to 12
/// sites, the 3x3 torus, and tree balls of degree 2 and 3.
pub fn random_instance(seed: u64) -> Result<Instance> {
    let mut rng = stream_rng(seed, 0);
    let topology = match rng.random_range(0..5) {
        0 | 1 => Topology::torus(1, rng.random_range(3..=12))?,
        2 => Topology::torus(2, 3)?,
        3 => Topology::tree_ball(2, rng.random_range(1..=2))?,
        _ => Topology::tree_ball(3, 1)?,
    };
    let a = 3.0 * (1.0 - rng.random::<f64>());
    let b = 3.0 * (1.0 - rng.random::<f64>());
    let (lambda1, lambda2) = if rng.random_bool(0.1) { (b, b) } else { (a.min(b), a.max(b)) };
    let horizon = 3.0 * (1.0 - rng.random::<f64>());
    let t = horizon * (1.0 - rng.random::<f64>());
    let n = topology.site_count();
    let xi0 = Configuration::from_states((0..n).map(|_| rng.random_range(0..3u8)).collect())?;
    let x = rng.random_range(0..n);
    let log = sample_events(&topology, lambda1, lambda2, horizon, seed)?;
    Ok(Instance { topology, log, xi0, x, t, seed })
}

/// Runs every exact check on one instance.
pub fn check_instance(inst: &Instance) -> Result<InstanceOutcome> {
    let Instance { topology: topo, log, xi0, x, t, .. } = inst;
    let dual = run_ancestors(topo, log, *x, *t)?;
    let mut out = InstanceOutcome {
        duality: duality_check_with(topo, log, xi0, &dual)?,
        support: true,
        marks: true,
        coupling: coupling_holds(topo, log, *x),
        jumps: dual.jump_count(),
    };
    for k in 0..dual.jump_count() {
        let view = dual.state(k);
        let floor = view.forward_time();
        let both = reachable_set_down_to(topo, log, *x, *t, floor, PathKind::Both)?;
        out.support &= view.support() == both;
        let one = reachable_set_down_to(topo, log, *x, *t, floor, PathKind::One)?;
        let two = reachable_set_down_to(topo, log, *x, *t, floor, PathKind::Two)?;
        out.marks &= view.sites_with_mark(Mark::One) == one && view.sites_with_mark(Mark::Two) == two;
    }
    Ok(out)
}

/// ζ^{1,x}_s ⊆ ζ^{2,x}_s after every event of the log.
pub fn coupling_holds(topo: &Topology, log: &EventLog, x: Site) -> bool {
    let n = topo.site_count();
    let mut one = vec![false; n];
    let mut two = vec![false; n];
    one[x] = true;
    two[x] = true;
    for ev in log.events() {
        match ev.kind {
            EventKind::Death { site } => {
                one[site] = false;
                two[site] = false;
            }
            EventKind::Arrow { from, to, two_only } => {
                if one[from] && !two_only {
                    one[to] = true;
                }
                if two[from] {
                    two[to] = true;
                }
            }
        }
        if one.iter().zip(&two).any(|(&a, &b)| a && !b) {
            return false;
        }
    }
    true
}
