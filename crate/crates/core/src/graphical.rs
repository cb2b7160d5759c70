//! Materialized graphical construction: per-site death marks and per-edge
//! birth arrows on a finite time window.
//!
//! Deaths at each site arrive at rate 1, arrows along each directed edge at
//! rate `lambda2`, and each arrow independently carries the 2-only label with
//! probability `1 - lambda1 / lambda2`. The log is fully materialized so the
//! forward process and every dual can be run on one realization.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::streams::stream_rng;
use crate::topology::{Site, Topology, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrow {
    pub time: f64,
    pub two_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Death { site: Site },
    Arrow { from: Site, to: Site, two_only: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// One realization of all Poisson event streams on `(0, horizon]`.
#[derive(Debug, Clone)]
pub struct EventLog {
    topology: TopologySpec,
    site_count: usize,
    horizon: f64,
    lambda1: f64,
    lambda2: f64,
    seed: Option<u64>,
    deaths: Vec<Vec<f64>>,
    arrows: Vec<Vec<Arrow>>,
    merged: Vec<Event>,
}

pub(crate) fn validate_rates(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(lambda1.is_finite() && lambda2.is_finite()) || lambda1 <= 0.0 || lambda2 <= 0.0 {
        return Err(Error::InvalidRates(format!(
            "rates must be positive and finite, got lambda1={lambda1}, lambda2={lambda2}"
        )));
    }
    if lambda1 > lambda2 {
        return Err(Error::InvalidRates(format!(
            "types must be ordered so that lambda1 <= lambda2, got {lambda1} > {lambda2}"
        )));
    }
    Ok(())
}

fn validate_horizon(horizon: f64) -> Result<()> {
    if !horizon.is_finite() || horizon <= 0.0 {
        return Err(Error::InvalidTime(format!("horizon must be positive, got {horizon}")));
    }
    Ok(())
}

/// Samples every death and arrow stream of `topo` on `(0, horizon]`.
///
/// Deaths at site `x` use stream `x`; arrows along directed edge `e` use
/// stream `site_count + e`. Regeneration from the same arguments is bit-exact.
pub fn sample_events(topo: &Topology, lambda1: f64, lambda2: f64, horizon: f64, seed: u64) -> Result<EventLog> {
    validate_rates(lambda1, lambda2)?;
    validate_horizon(horizon)?;
    let n = topo.site_count();
    let edges = topo.directed_edge_count();
    let death_clock = Exp::new(1.0).expect("unit rate");
    let arrow_clock = Exp::new(lambda2).map_err(|e| Error::InvalidRates(e.to_string()))?;
    let p_two_only = 1.0 - lambda1 / lambda2;

    let streams = resolve_ties(n + edges, |stream, attempt| {
        let key = (attempt << 40) | stream as u64;
        let mut rng = stream_rng(seed, key);
        let mut out = Vec::new();
        let mut t = 0.0;
        if stream < n {
            loop {
                t += death_clock.sample(&mut rng);
                if t > horizon {
                    break;
                }
                out.push((t, false));
            }
        } else {
            loop {
                t += arrow_clock.sample(&mut rng);
                if t > horizon {
                    break;
                }
                let label = rng.random::<f64>() < p_two_only;
                out.push((t, label));
            }
        }
        out
    });

    let mut deaths = Vec::with_capacity(n);
    let mut arrows = Vec::with_capacity(edges);
    for (stream, events) in streams.into_iter().enumerate() {
        if stream < n {
            deaths.push(events.into_iter().map(|(t, _)| t).collect());
        } else {
            arrows.push(events.into_iter().map(|(time, two_only)| Arrow { time, two_only }).collect());
        }
    }
    let merged = merge(topo, &deaths, &arrows);
    Ok(EventLog {
        topology: topo.spec(),
        site_count: n,
        horizon,
        lambda1,
        lambda2,
        seed: Some(seed),
        deaths,
        arrows,
        merged,
    })
}

/// Generates `streams` event streams and regenerates any stream whose
/// timestamp collides with an earlier stream (or repeats within itself) under
/// a fresh attempt number until all timestamps are distinct.
fn resolve_ties<F>(streams: usize, generate: F) -> Vec<Vec<(f64, bool)>>
where
    F: Fn(usize, u64) -> Vec<(f64, bool)>,
{
    let mut attempts = vec![0u64; streams];
    let mut out: Vec<Vec<(f64, bool)>> = (0..streams).map(|s| generate(s, 0)).collect();
    loop {
        let mut stamps: Vec<(f64, usize)> =
            out.iter().enumerate().flat_map(|(s, v)| v.iter().map(move |&(t, _)| (t, s))).collect();
        stamps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut clashing: Vec<usize> = stamps.windows(2).filter(|w| w[0].0 == w[1].0).map(|w| w[1].1).collect();
        if clashing.is_empty() {
            return out;
        }
        clashing.sort_unstable();
        clashing.dedup();
        for s in clashing {
            attempts[s] += 1;
            out[s] = generate(s, attempts[s]);
        }
    }
}

fn merge(topo: &Topology, deaths: &[Vec<f64>], arrows: &[Vec<Arrow>]) -> Vec<Event> {
    let total = deaths.iter().map(Vec::len).sum::<usize>() + arrows.iter().map(Vec::len).sum::<usize>();
    let mut merged = Vec::with_capacity(total);
    for (site, ts) in deaths.iter().enumerate() {
        merged.extend(ts.iter().map(|&time| Event { time, kind: EventKind::Death { site } }));
    }
    for (edge, list) in arrows.iter().enumerate() {
        let (from, to) = topo.edge_endpoints(edge);
        merged.extend(
            list.iter().map(|a| Event { time: a.time, kind: EventKind::Arrow { from, to, two_only: a.two_only } }),
        );
    }
    merged.sort_by(|a, b| a.time.total_cmp(&b.time));
    merged
}

impl EventLog {
    /// Builds a log from explicit events, e.g. a hand-drawn realization.
    /// Events may be given in any order; all constraints of sampled logs
    /// are enforced.
    pub fn from_events(topo: &Topology, lambda1: f64, lambda2: f64, horizon: f64, events: &[Event]) -> Result<Self> {
        validate_rates(lambda1, lambda2)?;
        validate_horizon(horizon)?;
        let n = topo.site_count();
        let mut deaths = vec![Vec::new(); n];
        let mut arrows = vec![Vec::new(); topo.directed_edge_count()];
        for ev in events {
            if !(ev.time > 0.0 && ev.time <= horizon) {
                return Err(Error::InvalidLog(format!("event time {} outside (0, {horizon}]", ev.time)));
            }
            match ev.kind {
                EventKind::Death { site } => {
                    topo.check_site(site)?;
                    deaths[site].push(ev.time);
                }
                EventKind::Arrow { from, to, two_only } => {
                    let edge = topo
                        .edge_id(from, to)
                        .ok_or_else(|| Error::InvalidLog(format!("no edge {from} -> {to} in the topology")))?;
                    if two_only && lambda1 == lambda2 {
                        return Err(Error::InvalidLog("2-only arrows cannot occur when lambda1 == lambda2".into()));
                    }
                    arrows[edge].push(Arrow { time: ev.time, two_only });
                }
            }
        }
        for d in &mut deaths {
            d.sort_by(f64::total_cmp);
        }
        for a in &mut arrows {
            a.sort_by(|x, y| x.time.total_cmp(&y.time));
        }
        let merged = merge(topo, &deaths, &arrows);
        if merged.windows(2).any(|w| w[0].time == w[1].time) {
            return Err(Error::InvalidLog("event timestamps must be pairwise distinct".into()));
        }
        Ok(Self { topology: topo.spec(), site_count: n, horizon, lambda1, lambda2, seed: None, deaths, arrows, merged })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn topology_spec(&self) -> TopologySpec {
        self.topology
    }

    pub fn deaths(&self, x: Site) -> &[f64] {
        &self.deaths[x]
    }

    /// Arrows along directed edge id `edge` (see [`Topology::edge_id`]).
    pub fn arrows(&self, edge: usize) -> &[Arrow] {
        &self.arrows[edge]
    }

    pub fn len(&self) -> usize {
        self.merged.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merged.is_empty()
    }

    /// All events in increasing time order.
    pub fn events(&self) -> &[Event] {
        &self.merged
    }

    pub fn cursor(&self, direction: Direction) -> EventCursor<'_> {
        EventCursor::new(&self.merged, direction)
    }

    /// Checks that the log was built for `topo`.
    pub fn check_topology(&self, topo: &Topology) -> Result<()> {
        if topo.spec() != self.topology || topo.site_count() != self.site_count {
            return Err(Error::InvalidLog(format!(
                "log was built for {} but used with {}",
                self.topology,
                topo.spec()
            )));
        }
        Ok(())
    }

    /// Line-oriented text dump: a `#` header with the parameters, then one
    /// event per line as `time death x` or `time arrow x y two_only`, with
    /// times printed to 17 significant digits.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = write!(
            out,
            "# mtcp-event-log horizon={:.16e} lambda1={:.16e} lambda2={:.16e}",
            self.horizon, self.lambda1, self.lambda2
        );
        if let Some(seed) = self.seed {
            let _ = write!(out, " seed={seed}");
        }
        out.push('\n');
        for ev in &self.merged {
            match ev.kind {
                EventKind::Death { site } => {
                    let _ = writeln!(out, "{:.16e} death {site}", ev.time);
                }
                EventKind::Arrow { from, to, two_only } => {
                    let _ = writeln!(out, "{:.16e} arrow {from} {to} {}", ev.time, u8::from(two_only));
                }
            }
        }
        out
    }

    /// Parses the output of [`EventLog::dump`].
    pub fn parse(topo: &Topology, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .and_then(|h| h.strip_prefix("# mtcp-event-log"))
            .ok_or_else(|| Error::Parse("missing event-log header".into()))?;
        let mut horizon = None;
        let mut lambda1 = None;
        let mut lambda2 = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| Error::Parse(format!("bad header field {field:?}")))?;
            let num = || v.parse::<f64>().map_err(|e| Error::Parse(format!("{k}: {e}")));
            match k {
                "horizon" => horizon = Some(num()?),
                "lambda1" => lambda1 = Some(num()?),
                "lambda2" => lambda2 = Some(num()?),
                "seed" => seed = Some(v.parse::<u64>().map_err(|e| Error::Parse(format!("seed: {e}")))?),
                _ => return Err(Error::Parse(format!("unknown header field {k:?}"))),
            }
        }
        let missing = |name: &str| Error::Parse(format!("header lacks {name}"));
        let (horizon, lambda1, lambda2) = (
            horizon.ok_or_else(|| missing("horizon"))?,
            lambda1.ok_or_else(|| missing("lambda1"))?,
            lambda2.ok_or_else(|| missing("lambda2"))?,
        );
        let mut events = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Parse(format!("line {}: {line:?}", lineno + 2));
            let parts: Vec<&str> = line.split_whitespace().collect();
            let time: f64 = parts.first().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let site = |i: usize| -> Result<Site> { parts.get(i).and_then(|s| s.parse().ok()).ok_or_else(bad) };
            let kind = match (parts.get(1).copied(), parts.len()) {
                (Some("death"), 3) => EventKind::Death { site: site(2)? },
                (Some("arrow"), 5) => EventKind::Arrow {
                    from: site(2)?,
                    to: site(3)?,
                    two_only: match parts[4] {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad()),
                    },
                },
                _ => return Err(bad()),
            };
            events.push(Event { time, kind });
        }
        let mut log = Self::from_events(topo, lambda1, lambda2, horizon, &events)?;
        log.seed = seed;
        Ok(log)
    }
}

/// Iterates the merged events of a log in one time direction.
#[derive(Debug, Clone)]
pub struct EventCursor<'a> {
    events: &'a [Event],
    next: usize,
    remaining: usize,
    direction: Direction,
    position: Option<f64>,
}

impl<'a> EventCursor<'a> {
    fn new(events: &'a [Event], direction: Direction) -> Self {
        let next = match direction {
            Direction::Forward => 0,
            Direction::Reverse => events.len().wrapping_sub(1),
        };
        Self { events, next, remaining: events.len(), direction, position: None }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Time of the most recently yielded event.
    pub fn position(&self) -> Option<f64> {
        self.position
    }

    /// Time of the next event without consuming it.
    pub fn peek_time(&self) -> Option<f64> {
        (self.remaining > 0).then(|| self.events[self.next].time)
    }
}

impl<'a> Iterator for EventCursor<'a> {
    type Item = &'a Event;

    fn next(&mut self) -> Option<&'a Event> {
        if self.remaining == 0 {
            return None;
        }
        let ev = &self.events[self.next];
        self.remaining -= 1;
        match self.direction {
            Direction::Forward => self.next += 1,
            Direction::Reverse => self.next = self.next.wrapping_sub(1),
        }
        self.position = Some(ev.time);
        Some(ev)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for EventCursor<'_> {}
