//! Event-driven exact sampler for large graphs.
//!
//! Only occupied sites generate proposals: each occupied site fires at the
//! uniform rate `1 + max_degree * lambda2`, and a fired proposal is a death,
//! a birth attempt along one neighbor slot, or nothing (thinning). The law of
//! the resulting path equals that of the graphical construction while the
//! cost scales with the occupied set rather than the whole graph.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::forward::Configuration;
use crate::streams::stream_rng;
use crate::topology::{Site, Topology};

const VACANT: usize = usize::MAX;

/// One effective state change.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub time: f64,
    pub site: Site,
    pub from: u8,
    pub to: u8,
}

#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    topo: &'a Topology,
    lambda2: f64,
    ratio: f64,
    site_rate: f64,
    states: Vec<u8>,
    occupied: Vec<Site>,
    position: Vec<usize>,
    counts: [usize; 3],
    time: f64,
    rng: ChaCha8Rng,
}

impl<'a> Simulator<'a> {
    /// Rates must satisfy 0 <= lambda1 <= lambda2 < infinity; zero rates are
    /// allowed.
    pub fn new(topo: &'a Topology, lambda1: f64, lambda2: f64, xi0: &Configuration, seed: u64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda2.is_finite() && 0.0 <= lambda1 && lambda1 <= lambda2) {
            return Err(Error::InvalidRates(format!("need 0 <= lambda1 <= lambda2 < inf, got {lambda1}, {lambda2}")));
        }
        xi0.check_size(topo)?;
        let n = topo.site_count();
        let mut sim = Self {
            topo,
            lambda2,
            ratio: if lambda2 > 0.0 { lambda1 / lambda2 } else { 0.0 },
            site_rate: 1.0 + topo.max_degree() as f64 * lambda2,
            states: vec![0; n],
            occupied: Vec::new(),
            position: vec![VACANT; n],
            counts: [n, 0, 0],
            time: 0.0,
            rng: stream_rng(seed, u64::MAX),
        };
        for (x, &s) in xi0.states().iter().enumerate() {
            if s != 0 {
                sim.put(x, s);
            }
        }
        Ok(sim)
    }

    /// Single-type process at rate `lambda` from the occupied set `a0`.
    pub fn single_type(topo: &'a Topology, lambda: f64, a0: impl IntoIterator<Item = Site>, seed: u64) -> Result<Self> {
        let xi0 = Configuration::with_sites(topo.site_count(), a0, 2)?;
        Self::new(topo, lambda, lambda, &xi0, seed)
    }

    fn put(&mut self, x: Site, s: u8) {
        let old = self.states[x];
        self.counts[old as usize] -= 1;
        self.counts[s as usize] += 1;
        self.states[x] = s;
        match (old, s) {
            (0, _) => {
                self.position[x] = self.occupied.len();
                self.occupied.push(x);
            }
            (_, 0) => {
                let i = self.position[x];
                self.occupied.swap_remove(i);
                if let Some(&moved) = self.occupied.get(i) {
                    self.position[moved] = i;
                }
                self.position[x] = VACANT;
            }
            _ => {}
        }
    }

    /// Advances to the next state change at or before `t_end`. Returns
    /// `None`, with the clock set to `t_end`, when there is none.
    pub fn step(&mut self, t_end: f64) -> Option<Transition> {
        loop {
            let n = self.occupied.len();
            if n == 0 || self.time >= t_end {
                self.time = self.time.max(t_end);
                return None;
            }
            let wait = Exp::new(self.site_rate * n as f64).expect("positive rate").sample(&mut self.rng);
            if self.time + wait > t_end {
                self.time = t_end;
                return None;
            }
            self.time += wait;
            let x = self.occupied[self.rng.random_range(0..n)];
            let u = self.rng.random::<f64>() * self.site_rate;
            let s = self.states[x];
            if u < 1.0 {
                self.put(x, 0);
                return Some(Transition { time: self.time, site: x, from: s, to: 0 });
            }
            let v = (u - 1.0) / self.lambda2;
            let slot = v as usize;
            let nbrs = self.topo.neighbors(x);
            if slot >= nbrs.len() {
                continue;
            }
            let y = nbrs[slot];
            if self.states[y] != 0 || (s == 1 && v - slot as f64 >= self.ratio) {
                continue;
            }
            self.put(y, s);
            return Some(Transition { time: self.time, site: y, from: 0, to: s });
        }
    }

    /// Runs to time `t` (no-op if already there).
    pub fn run_until(&mut self, t: f64) {
        while self.step(t).is_some() {}
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn get(&self, x: Site) -> u8 {
        self.states[x]
    }

    pub fn states(&self) -> &[u8] {
        &self.states
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::from_states(self.states.clone()).expect("simulator states are valid")
    }

    /// Number of sites in state 0, 1, 2.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn occupied(&self) -> &[Site] {
        &self.occupied
    }

    pub fn is_extinct(&self) -> bool {
        self.occupied.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rates_only_kill() {
        let topo = Topology::torus(1, 10).unwrap();
        let mut sim = Simulator::single_type(&topo, 0.0, 0..10, 1).unwrap();
        while let Some(tr) = sim.step(100.0) {
            assert_eq!(tr.to, 0);
        }
        assert!(sim.is_extinct());
        assert_eq!(sim.time(), 100.0);
    }

    #[test]
    fn equal_rates_from_twos_never_make_ones() {
        let topo = Topology::tree_ball(2, 3).unwrap();
        let mut sim = Simulator::single_type(&topo, 2.0, [0], 5).unwrap();
        sim.run_until(5.0);
        assert_eq!(sim.counts()[1], 0);
        assert_eq!(sim.counts().iter().sum::<usize>(), topo.site_count());
    }

    #[test]
    fn bookkeeping_stays_consistent() {
        let topo = Topology::torus(2, 6).unwrap();
        let xi0 = Configuration::from_states((0..36).map(|i| (i % 3) as u8).collect()).unwrap();
        let mut sim = Simulator::new(&topo, 1.0, 2.0, &xi0, 9).unwrap();
        let mut last = 0.0;
        while let Some(tr) = sim.step(3.0) {
            assert!(tr.time >= last);
            last = tr.time;
            let mut occ: Vec<_> = sim.occupied().to_vec();
            occ.sort_unstable();
            let expect: Vec<_> = (0..36).filter(|&x| sim.get(x) != 0).collect();
            assert_eq!(occ, expect);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let topo = Topology::torus(1, 50).unwrap();
        let run = |seed| {
            let mut sim = Simulator::single_type(&topo, 1.7, [0, 1, 2], seed).unwrap();
            sim.run_until(10.0);
            sim.configuration()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn rejects_inverted_rates() {
        let topo = Topology::path(2).unwrap();
        assert!(Simulator::new(&topo, 2.0, 1.0, &Configuration::vacant(2), 0).is_err());
    }
}
