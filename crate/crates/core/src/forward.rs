//! Forward evolution of the two-type process and of the coupled single-type
//! processes over a materialized event log.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graphical::{EventKind, EventLog};
use crate::topology::{Site, Topology};

/// Site states: 0 vacant, 1 or 2 occupied by that type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Configuration(Vec<u8>);

impl Configuration {
    pub fn vacant(n: usize) -> Self {
        Self(vec![0; n])
    }

    pub fn filled(n: usize, state: u8) -> Result<Self> {
        Self::from_states(vec![state; n])
    }

    pub fn from_states(states: Vec<u8>) -> Result<Self> {
        if let Some(bad) = states.iter().find(|&&s| s > 2) {
            return Err(Error::InvalidArgument(format!("site state {bad} is not in {{0,1,2}}")));
        }
        Ok(Self(states))
    }

    /// Configuration with `state` on `sites` and 0 elsewhere.
    pub fn with_sites(n: usize, sites: impl IntoIterator<Item = Site>, state: u8) -> Result<Self> {
        let mut c = Self::vacant(n);
        for x in sites {
            if x >= n {
                return Err(Error::InvalidSite { site: x, site_count: n });
            }
            c.set(x, state)?;
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, x: Site) -> u8 {
        self.0[x]
    }

    pub fn set(&mut self, x: Site, state: u8) -> Result<()> {
        if state > 2 {
            return Err(Error::InvalidArgument(format!("site state {state} is not in {{0,1,2}}")));
        }
        self.0[x] = state;
        Ok(())
    }

    pub fn states(&self) -> &[u8] {
        &self.0
    }

    /// Sites holding `state`.
    pub fn sites_with(&self, state: u8) -> BTreeSet<Site> {
        self.0.iter().enumerate().filter(|(_, &s)| s == state).map(|(x, _)| x).collect()
    }

    pub fn ones(&self) -> BTreeSet<Site> {
        self.sites_with(1)
    }

    pub fn twos(&self) -> BTreeSet<Site> {
        self.sites_with(2)
    }

    pub fn check_size(&self, topo: &Topology) -> Result<()> {
        if self.len() != topo.site_count() {
            return Err(Error::ConfigurationSize { got: self.len(), expected: topo.site_count() });
        }
        Ok(())
    }
}

/// Counts of vacant, type-1 and type-2 sites.
pub fn count_types(xi: &Configuration) -> (usize, usize, usize) {
    let mut c = [0usize; 3];
    for &s in xi.states() {
        c[s as usize] += 1;
    }
    (c[0], c[1], c[2])
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &s in &self.0 {
            f.write_str(match s {
                0 => "0",
                1 => "1",
                _ => "2",
            })?;
        }
        Ok(())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                '2' => Ok(2),
                other => Err(Error::Parse(format!("unexpected character {other:?} in configuration"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Self)
    }
}

fn check_window(log: &EventLog, from: f64, to: f64) -> Result<()> {
    if !(from >= 0.0 && from <= to && to <= log.horizon()) {
        return Err(Error::InvalidTime(format!("window [{from}, {to}] not inside [0, {}]", log.horizon())));
    }
    Ok(())
}

/// Applies one event to a two-type configuration.
#[inline]
pub(crate) fn apply(states: &mut [u8], kind: &EventKind) {
    match *kind {
        EventKind::Death { site } => states[site] = 0,
        EventKind::Arrow { from, to, two_only } => {
            let src = states[from];
            if src != 0 && states[to] == 0 && (src == 2 || !two_only) {
                states[to] = src;
            }
        }
    }
}

/// Configuration at time `t` of the process started from `xi0` at time 0.
pub fn evolve(topo: &Topology, log: &EventLog, xi0: &Configuration, t: f64) -> Result<Configuration> {
    evolve_between(topo, log, xi0, 0.0, t)
}

/// Configuration at time `t` given the configuration `xi_s` at time `s`,
/// applying the events in `(s, t]`.
pub fn evolve_between(topo: &Topology, log: &EventLog, xi_s: &Configuration, s: f64, t: f64) -> Result<Configuration> {
    log.check_topology(topo)?;
    xi_s.check_size(topo)?;
    check_window(log, s, t)?;
    let events = log.events();
    let start = events.partition_point(|e| e.time <= s);
    let mut states = xi_s.0.clone();
    for ev in &events[start..] {
        if ev.time > t {
            break;
        }
        apply(&mut states, &ev.kind);
    }
    Ok(Configuration(states))
}

/// Which arrows a single-type process may use: type 1 only unlabeled arrows,
/// type 2 every arrow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeKind {
    One,
    Two,
}

/// Occupied set at time `t` of the single-type process started from `a0`,
/// i.e. the endpoints of all i-paths up from `a0 x {0}`.
pub fn evolve_single(
    topo: &Topology,
    log: &EventLog,
    a0: &BTreeSet<Site>,
    t: f64,
    kind: TypeKind,
) -> Result<BTreeSet<Site>> {
    log.check_topology(topo)?;
    check_window(log, 0.0, t)?;
    let mut occ = vec![false; topo.site_count()];
    for &x in a0 {
        topo.check_site(x)?;
        occ[x] = true;
    }
    for ev in log.events() {
        if ev.time > t {
            break;
        }
        match ev.kind {
            EventKind::Death { site } => occ[site] = false,
            EventKind::Arrow { from, to, two_only } => {
                if occ[from] && (kind == TypeKind::Two || !two_only) {
                    occ[to] = true;
                }
            }
        }
    }
    Ok(occ.iter().enumerate().filter(|(_, &o)| o).map(|(x, _)| x).collect())
}

/// Configurations at increasing sample times from one forward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub configurations: Vec<Configuration>,
    pub seed: Option<u64>,
}

pub fn trajectory(topo: &Topology, log: &EventLog, xi0: &Configuration, sample_times: &[f64]) -> Result<Trajectory> {
    log.check_topology(topo)?;
    xi0.check_size(topo)?;
    if sample_times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidTime("sample times must be nondecreasing".into()));
    }
    if let (Some(&first), Some(&last)) = (sample_times.first(), sample_times.last()) {
        check_window(log, first, last)?;
    }
    let mut states = xi0.0.clone();
    let mut configurations = Vec::with_capacity(sample_times.len());
    let mut events = log.events().iter().peekable();
    for &ts in sample_times {
        while let Some(ev) = events.next_if(|e| e.time <= ts) {
            apply(&mut states, &ev.kind);
        }
        configurations.push(Configuration(states.clone()));
    }
    Ok(Trajectory { times: sample_times.to_vec(), configurations, seed: log.seed() })
}
