//! Reverse-time duals over a fixed event log: the reachable-ancestor sets
//! D_s^{i,(x,t)}, the ordered ancestor process with 1-blocking marks, the
//! duality function Ψ and the pathwise duality check.
//!
//! # Representation
//!
//! Each time an arrow `a -> b` lands on a site `b` of the current support,
//! the ancestor list receives one copy of `(a, mark)` immediately after
//! every entry at `b`. Entries therefore multiply along repeated arrows, and
//! the list can grow exponentially in the dual time. [`run_ancestors`]
//! stores the list as an append-only lineage graph instead:
//!
//! * every insertion event creates exactly one node (site, incoming arrow
//!   label);
//! * all entries at one site that were inserted since the last death at that
//!   site share a single chain of children (a *segment*);
//! * a node's children are the chain elements appended after the node was
//!   created, in increasing forward time.
//!
//! The ordered list is the pre-order unfolding of this graph from the base
//! point. Dead nodes (deleted entries) stay in the graph as relays: a later
//! arrow into a vacant site still has to pass through them.
//!
//! # The duality function
//!
//! A site holding a type-1 individual that sits on a 1-blocked lineage
//! still occupies that site. Entries that reach the base point only through
//! it must not be consulted. The scan therefore skips, on meeting such an
//! entry, the whole block of its nearest lineage ancestor entered through a
//! 2-only arrow. On a list without nesting this is the plain priority scan.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::forward::{evolve, trajectory, Configuration};
use crate::graphical::{EventKind, EventLog};
use crate::topology::{Site, Topology};

/// Entry mark: `One` for an unblocked lineage, `Two` for a 1-blocked one
/// (its path to the base point crosses a 2-only arrow).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mark {
    One,
    Two,
}

impl Mark {
    fn bit(self) -> u8 {
        match self {
            Mark::One => MARK_ONE,
            Mark::Two => MARK_TWO,
        }
    }

    fn through(self, two_only_edge: bool) -> Mark {
        if two_only_edge {
            Mark::Two
        } else {
            self
        }
    }
}

impl fmt::Display for Mark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mark::One => "1",
            Mark::Two => "2",
        })
    }
}

const MARK_ONE: u8 = 1;
const MARK_TWO: u8 = 2;
const ALIVE: u32 = u32::MAX;

/// Does a site value `v` reached through an arrow with this label get across?
#[inline]
fn transmits(v: u8, two_only_edge: bool) -> bool {
    v == 2 || (v == 1 && !two_only_edge)
}

// ---------------------------------------------------------------------------
// Explicit ancestor lists
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
struct ListEntry {
    site: Site,
    mark: Mark,
    depth: u32,
    two_only_edge: bool,
    live: bool,
}

/// An ordered ancestor list `((a_1, b_1), ..., (a_n, b_n))`, highest priority
/// first, together with its lineage nesting.
///
/// Lists built from plain pairs ([`AncestorList::from_pairs`] or parsing)
/// carry no nesting; lists materialized from a dual run keep the nesting and
/// any relay entries (deleted sites whose later arrivals still route through
/// them). Relay entries are invisible in [`entries`](Self::entries).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AncestorList {
    entries: Vec<ListEntry>,
}

impl AncestorList {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Flat list: every entry hangs directly off the base point, a mark-2
    /// entry through a 2-only arrow.
    pub fn from_pairs(pairs: &[(Site, Mark)]) -> Self {
        Self {
            entries: pairs
                .iter()
                .map(|&(site, mark)| ListEntry { site, mark, depth: 0, two_only_edge: mark == Mark::Two, live: true })
                .collect(),
        }
    }

    /// Visible `(site, mark)` entries in priority order.
    pub fn entries(&self) -> impl Iterator<Item = (Site, Mark)> + '_ {
        self.entries.iter().filter(|e| e.live).map(|e| (e.site, e.mark))
    }

    pub fn len(&self) -> usize {
        self.entries.iter().filter(|e| e.live).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.entries.iter().any(|e| e.live)
    }

    pub fn support(&self) -> BTreeSet<Site> {
        self.entries().map(|(s, _)| s).collect()
    }

    /// Sites carrying `mark` on at least one entry.
    pub fn sites_with_mark(&self, mark: Mark) -> BTreeSet<Site> {
        self.entries().filter(|&(_, m)| m == mark).map(|(s, _)| s).collect()
    }

    /// Ψ: the state the base point receives when the ancestors hold `xi`.
    pub fn psi(&self, xi: &Configuration) -> u8 {
        let e = &self.entries;
        let mut i = 0;
        while i < e.len() {
            if !e[i].live {
                i += 1;
                continue;
            }
            let v = xi.get(e[i].site);
            match (v, e[i].mark) {
                (2, _) => return 2,
                (1, Mark::One) => return 1,
                (1, Mark::Two) => {
                    let g = self.blocking_ancestor(i);
                    let depth = e[g].depth;
                    i = g + 1;
                    while i < e.len() && e[i].depth > depth {
                        i += 1;
                    }
                }
                _ => i += 1,
            }
        }
        0
    }

    /// Nearest lineage ancestor-or-self of entry `i` entered through a 2-only
    /// arrow.
    fn blocking_ancestor(&self, i: usize) -> usize {
        let e = &self.entries;
        let mut j = i;
        loop {
            if e[j].two_only_edge {
                return j;
            }
            let depth = e[j].depth;
            match (0..j).rev().find(|&k| e[k].depth < depth) {
                Some(p) => j = p,
                None => return i,
            }
        }
    }

    /// The maximal prefix of 1-blocked ancestors; empty when the primary
    /// ancestor is not blocked.
    pub fn blocked_prefix(&self) -> BTreeSet<Site> {
        blocked_prefix_of(self.entries())
    }
}

fn blocked_prefix_of(entries: impl Iterator<Item = (Site, Mark)>) -> BTreeSet<Site> {
    entries.take_while(|&(_, m)| m == Mark::Two).map(|(s, _)| s).collect()
}

fn write_entries(f: &mut fmt::Formatter<'_>, entries: impl Iterator<Item = (Site, Mark)>) -> fmt::Result {
    for (k, (site, mark)) in entries.enumerate() {
        if k > 0 {
            f.write_str(";")?;
        }
        write!(f, "({site},{mark})")?;
    }
    Ok(())
}

/// `(site,mark);(site,mark);...`, empty string for the empty list.
impl fmt::Display for AncestorList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_entries(f, self.entries())
    }
}

impl FromStr for AncestorList {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Self::empty());
        }
        let pairs = s
            .split(';')
            .map(|item| {
                let bad = || Error::Parse(format!("bad ancestor entry {item:?}"));
                let inner = item.trim().strip_prefix('(').and_then(|r| r.strip_suffix(')')).ok_or_else(bad)?;
                let (site, mark) = inner.split_once(',').ok_or_else(bad)?;
                let site = site.trim().parse::<Site>().map_err(|_| bad())?;
                let mark = match mark.trim() {
                    "1" => Mark::One,
                    "2" => Mark::Two,
                    _ => return Err(bad()),
                };
                Ok((site, mark))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_pairs(&pairs))
    }
}

/// The duality function Ψ(x, ahat, xi).
pub fn psi(ahat: &AncestorList, xi: &Configuration) -> u8 {
    ahat.psi(xi)
}

/// The blocked-ancestor prefix A_t^x of an ancestor list.
pub fn blocked_prefix(ahat: &AncestorList) -> BTreeSet<Site> {
    ahat.blocked_prefix()
}

// ---------------------------------------------------------------------------
// Lineage graph
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Node {
    site: Site,
    two_only_edge: bool,
    marks: u8,
    segment: u32,
    child_start: u32,
    born: u32,
    died: u32,
}

#[derive(Debug, Clone, Default)]
struct Segment {
    children: Vec<u32>,
    members: Vec<u32>,
    mark_union: u8,
}

/// One jump of the ancestor process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    /// Forward time `t - s` of the event causing the jump.
    pub forward_time: f64,
    /// Support change: site added (`true`) or removed (`false`).
    pub support_change: Option<(Site, bool)>,
    live_entries: usize,
    node_count: usize,
}

/// The ancestor process ξ̂_s^{(x,t)}, 0 <= s <= t, on one event log.
///
/// Jump 0 is the initial state `((x, 1))` at dual time 0; jump `k` holds on
/// `[dual_time(k), dual_time(k + 1))`.
#[derive(Debug, Clone)]
pub struct DualTrajectory {
    base: Site,
    t: f64,
    nodes: Vec<Node>,
    segments: Vec<Segment>,
    jumps: Vec<Jump>,
    log_seed: Option<u64>,
}

/// Runs the ancestor process from `(x, t)` backwards to forward time 0.
pub fn run_ancestors(topo: &Topology, log: &EventLog, x: Site, t: f64) -> Result<DualTrajectory> {
    log.check_topology(topo)?;
    topo.check_site(x)?;
    if !(t >= 0.0 && t <= log.horizon()) {
        return Err(Error::InvalidTime(format!("base time {t} not in [0, {}]", log.horizon())));
    }
    let mut open: Vec<Option<u32>> = vec![None; topo.site_count()];
    let mut dual = DualTrajectory {
        base: x,
        t,
        nodes: vec![Node {
            site: x,
            two_only_edge: false,
            marks: MARK_ONE,
            segment: 0,
            child_start: 0,
            born: 0,
            died: ALIVE,
        }],
        segments: vec![Segment { children: Vec::new(), members: vec![0], mark_union: MARK_ONE }],
        jumps: vec![Jump { forward_time: t, support_change: None, live_entries: 1, node_count: 1 }],
        log_seed: log.seed(),
    };
    open[x] = Some(0);
    let mut live = 1usize;

    let events = log.events();
    let end = events.partition_point(|e| e.time <= t);
    for ev in events[..end].iter().rev() {
        if live == 0 {
            break;
        }
        let k = dual.jumps.len() as u32;
        let change = match ev.kind {
            EventKind::Death { site } => {
                let Some(seg) = open[site].take() else { continue };
                for &m in &dual.segments[seg as usize].members {
                    dual.nodes[m as usize].died = k;
                }
                live -= dual.segments[seg as usize].members.len();
                Some((site, false))
            }
            EventKind::Arrow { from, to, two_only } => {
                let Some(target) = open[to] else { continue };
                let marks = if two_only { MARK_TWO } else { dual.segments[target as usize].mark_union };
                let (seg, change) = match open[from] {
                    Some(seg) => (seg, None),
                    None => {
                        dual.segments.push(Segment::default());
                        let seg = (dual.segments.len() - 1) as u32;
                        open[from] = Some(seg);
                        (seg, Some((from, true)))
                    }
                };
                let id = dual.nodes.len() as u32;
                let segment = &mut dual.segments[seg as usize];
                dual.nodes.push(Node {
                    site: from,
                    two_only_edge: two_only,
                    marks,
                    segment: seg,
                    child_start: segment.children.len() as u32,
                    born: k,
                    died: ALIVE,
                });
                segment.members.push(id);
                segment.mark_union |= marks;
                dual.segments[target as usize].children.push(id);
                live += 1;
                change
            }
        };
        dual.jumps.push(Jump {
            forward_time: ev.time,
            support_change: change,
            live_entries: live,
            node_count: dual.nodes.len(),
        });
    }
    Ok(dual)
}

impl DualTrajectory {
    pub fn base(&self) -> (Site, f64) {
        (self.base, self.t)
    }

    pub fn log_seed(&self) -> Option<u64> {
        self.log_seed
    }

    /// Number of states, counting the initial one.
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn dual_time(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.t - self.jumps[k].forward_time
        }
    }

    pub fn forward_time(&self, k: usize) -> f64 {
        self.jumps[k].forward_time
    }

    /// Size of the lineage graph (number of insertion events plus one).
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn state(&self, k: usize) -> AncestorView<'_> {
        assert!(k < self.jumps.len(), "jump index {k} out of range");
        AncestorView { dual: self, k: k as u32 }
    }

    /// State at dual time `s` (right-continuous).
    pub fn state_at(&self, s: f64) -> AncestorView<'_> {
        let k = (1..self.jumps.len()).take_while(|&k| self.dual_time(k) <= s).last().unwrap_or(0);
        self.state(k)
    }

    pub fn final_state(&self) -> AncestorView<'_> {
        self.state(self.jumps.len() - 1)
    }

    /// Dual time at which the list became empty, if it did.
    pub fn extinction_time(&self) -> Option<f64> {
        let k = self.jumps.iter().position(|j| j.live_entries == 0)?;
        Some(self.dual_time(k))
    }

    fn children(&self, n: u32, k: u32) -> &[u32] {
        let node = &self.nodes[n as usize];
        let chain = &self.segments[node.segment as usize].children;
        let tail = &chain[node.child_start as usize..];
        let end = tail.partition_point(|&c| self.nodes[c as usize].born <= k);
        &tail[..end]
    }
}

/// The ancestor list at one jump of a [`DualTrajectory`], read directly from
/// the lineage graph.
#[derive(Debug, Clone, Copy)]
pub struct AncestorView<'a> {
    dual: &'a DualTrajectory,
    k: u32,
}

impl<'a> AncestorView<'a> {
    pub fn jump_index(&self) -> usize {
        self.k as usize
    }

    pub fn dual_time(&self) -> f64 {
        self.dual.dual_time(self.k as usize)
    }

    pub fn forward_time(&self) -> f64 {
        self.dual.forward_time(self.k as usize)
    }

    fn node_count(&self) -> usize {
        self.dual.jumps[self.k as usize].node_count
    }

    fn alive(&self, n: u32) -> bool {
        let node = &self.dual.nodes[n as usize];
        node.born <= self.k && node.died > self.k
    }

    pub fn is_empty(&self) -> bool {
        self.dual.jumps[self.k as usize].live_entries == 0
    }

    /// Sites in the support, D_s^{(x,t)}.
    pub fn support(&self) -> BTreeSet<Site> {
        (0..self.node_count() as u32).filter(|&n| self.alive(n)).map(|n| self.dual.nodes[n as usize].site).collect()
    }

    /// Sites carrying `mark` on at least one entry of the unfolded list.
    pub fn sites_with_mark(&self, mark: Mark) -> BTreeSet<Site> {
        (0..self.node_count() as u32)
            .filter(|&n| self.alive(n) && self.dual.nodes[n as usize].marks & mark.bit() != 0)
            .map(|n| self.dual.nodes[n as usize].site)
            .collect()
    }

    /// Ψ evaluated on the lineage graph by memoized recursion: a node takes
    /// its own site's value if alive and occupied, otherwise the value of its
    /// earliest child that gets across the connecting arrow.
    pub fn psi(&self, xi: &Configuration) -> u8 {
        const UNKNOWN: u8 = u8::MAX;
        let mut memo = vec![UNKNOWN; self.node_count()];
        // Frames: (node, next child position counted from the end of the
        // creation-ordered chain, i.e. in increasing forward time).
        let mut stack: Vec<(u32, usize)> = Vec::new();
        let enter = |n: u32, memo: &mut Vec<u8>, stack: &mut Vec<(u32, usize)>| {
            let node = &self.dual.nodes[n as usize];
            let own = xi.get(node.site);
            if own != 0 && self.alive(n) {
                memo[n as usize] = own;
            } else {
                stack.push((n, self.dual.children(n, self.k).len()));
            }
        };
        enter(0, &mut memo, &mut stack);
        while let Some(&mut (n, ref mut pos)) = stack.last_mut() {
            let kids = self.dual.children(n, self.k);
            let mut resolved = None;
            let mut descend = None;
            while *pos > 0 {
                let c = kids[*pos - 1];
                match memo[c as usize] {
                    UNKNOWN => {
                        descend = Some(c);
                        break;
                    }
                    v if transmits(v, self.dual.nodes[c as usize].two_only_edge) => {
                        resolved = Some(v);
                        break;
                    }
                    _ => *pos -= 1,
                }
            }
            if let Some(c) = descend {
                enter(c, &mut memo, &mut stack);
                continue;
            }
            memo[n as usize] = resolved.unwrap_or(0);
            stack.pop();
        }
        memo[0]
    }

    /// Lazily unfolds the ordered list, yielding live `(site, mark)` entries
    /// in priority order.
    pub fn entries(&self) -> Entries<'a> {
        Entries { view: *self, stack: vec![Frame { node: 0, mark: Mark::One, pos: None }] }
    }

    pub fn blocked_prefix(&self) -> BTreeSet<Site> {
        blocked_prefix_of(self.entries())
    }

    /// Materializes the ordered list with its nesting, failing if it would
    /// exceed `limit` entries.
    pub fn to_list(&self, limit: usize) -> Result<AncestorList> {
        // Which nodes have a live node in their unfolded subtree.
        let count = self.node_count();
        let mut has_live = vec![false; count];
        for n in (0..count as u32).rev() {
            // Children are created after their parents, so reverse id order
            // is a valid post-order.
            has_live[n as usize] = self.alive(n) || self.dual.children(n, self.k).iter().any(|&c| has_live[c as usize]);
        }
        let mut entries = Vec::new();
        if !has_live[0] {
            return Ok(AncestorList { entries });
        }
        let mut stack: Vec<(u32, Mark, u32)> = vec![(0, Mark::One, 0)];
        while let Some((n, mark, depth)) = stack.pop() {
            let node = &self.dual.nodes[n as usize];
            entries.push(ListEntry {
                site: node.site,
                mark,
                depth,
                two_only_edge: node.two_only_edge,
                live: self.alive(n),
            });
            if entries.len() > limit {
                return Err(Error::InvalidArgument(format!("ancestor list exceeds {limit} entries")));
            }
            // Creation order is decreasing forward time; pushing it onto the
            // stack pops children in increasing forward time.
            for &c in self.dual.children(n, self.k) {
                if has_live[c as usize] {
                    let cn = &self.dual.nodes[c as usize];
                    stack.push((c, mark.through(cn.two_only_edge), depth + 1));
                }
            }
        }
        Ok(AncestorList { entries })
    }
}

impl fmt::Display for AncestorView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_entries(f, self.entries())
    }
}

#[derive(Debug, Clone)]
struct Frame {
    node: u32,
    mark: Mark,
    // None until the node itself has been emitted.
    pos: Option<usize>,
}

/// Pre-order iterator over the unfolded ancestor list.
#[derive(Debug, Clone)]
pub struct Entries<'a> {
    view: AncestorView<'a>,
    stack: Vec<Frame>,
}

impl Iterator for Entries<'_> {
    type Item = (Site, Mark);

    fn next(&mut self) -> Option<(Site, Mark)> {
        let dual = self.view.dual;
        loop {
            let frame = self.stack.last_mut()?;
            match frame.pos {
                None => {
                    let kids = dual.children(frame.node, self.view.k);
                    frame.pos = Some(kids.len());
                    if self.view.alive(frame.node) {
                        return Some((dual.nodes[frame.node as usize].site, frame.mark));
                    }
                }
                Some(0) => {
                    self.stack.pop();
                }
                Some(ref mut pos) => {
                    let kids = dual.children(frame.node, self.view.k);
                    let c = kids[*pos - 1];
                    *pos -= 1;
                    let mark = frame.mark.through(dual.nodes[c as usize].two_only_edge);
                    self.stack.push(Frame { node: c, mark, pos: None });
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Reachable sets
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathKind {
    One,
    Two,
    Both,
}

/// D_s^{i,(x,t)}: sites `y` with an i-path up from `(y, t - s)` to `(x, t)`.
///
/// Computed by a reverse sweep over the log that tracks, per site, whether a
/// 1-path and whether a 2-path leads up to the base point. Events at forward
/// time exactly `t - s` are included, matching the right-continuous
/// ancestor process at its jump times.
pub fn reachable_set(
    topo: &Topology,
    log: &EventLog,
    x: Site,
    t: f64,
    s: f64,
    kind: PathKind,
) -> Result<BTreeSet<Site>> {
    if !(s >= 0.0 && s <= t) {
        return Err(Error::InvalidTime(format!("dual time {s} not in [0, {t}]")));
    }
    reachable_set_down_to(topo, log, x, t, t - s, kind)
}

/// As [`reachable_set`], parameterized by the forward time `floor = t - s`.
pub fn reachable_set_down_to(
    topo: &Topology,
    log: &EventLog,
    x: Site,
    t: f64,
    floor: f64,
    kind: PathKind,
) -> Result<BTreeSet<Site>> {
    log.check_topology(topo)?;
    topo.check_site(x)?;
    if !(t <= log.horizon() && floor >= 0.0 && floor <= t) {
        return Err(Error::InvalidTime(format!("window [{floor}, {t}] outside [0, {}]", log.horizon())));
    }
    let n = topo.site_count();
    let mut one = vec![false; n];
    let mut two = vec![false; n];
    one[x] = true;
    let events = log.events();
    let hi = events.partition_point(|e| e.time <= t);
    let lo = events.partition_point(|e| e.time < floor);
    for ev in events[lo..hi].iter().rev() {
        match ev.kind {
            EventKind::Death { site } => {
                one[site] = false;
                two[site] = false;
            }
            EventKind::Arrow { from, to, two_only } => {
                if two_only {
                    if one[to] || two[to] {
                        two[from] = true;
                    }
                } else {
                    one[from] |= one[to];
                    two[from] |= two[to];
                }
            }
        }
    }
    Ok((0..n)
        .filter(|&y| match kind {
            PathKind::One => one[y],
            PathKind::Two => two[y],
            PathKind::Both => one[y] || two[y],
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Duality check and dual statistics
// ---------------------------------------------------------------------------

/// Checks `xi_t(x) = Ψ(x, ξ̂_s^{(x,t)}, ξ_{t-s})` at s = 0, at every dual jump
/// time and at s = t. Both sides are constant between jumps, so this covers
/// all of `[0, t]`.
pub fn duality_check(topo: &Topology, log: &EventLog, xi0: &Configuration, x: Site, t: f64) -> Result<bool> {
    let dual = run_ancestors(topo, log, x, t)?;
    duality_check_with(topo, log, xi0, &dual)
}

/// [`duality_check`] against an already computed dual.
pub fn duality_check_with(topo: &Topology, log: &EventLog, xi0: &Configuration, dual: &DualTrajectory) -> Result<bool> {
    let (x, t) = dual.base();
    let target = evolve(topo, log, xi0, t)?.get(x);
    // Forward times of the jumps, ascending, plus time 0 for s = t.
    let mut times: Vec<f64> = (0..dual.jump_count()).rev().map(|k| dual.forward_time(k)).collect();
    times.insert(0, 0.0);
    let traj = trajectory(topo, log, xi0, &times)?;
    let last = dual.jump_count() - 1;
    if dual.state(last).psi(&traj.configurations[0]) != target {
        return Ok(false);
    }
    for (i, k) in (0..dual.jump_count()).rev().enumerate() {
        if dual.state(k).psi(&traj.configurations[i + 1]) != target {
            return Ok(false);
        }
    }
    Ok(true)
}

/// First and last dual times at which the support meets `target`; `None`
/// when it never does.
pub fn hit_times(dual: &DualTrajectory, target: &BTreeSet<Site>) -> (Option<f64>, Option<f64>) {
    let (x, t) = dual.base();
    let mut inside = usize::from(target.contains(&x));
    let mut first = None;
    let mut last = None;
    let mut active_since: Option<usize> = None;
    for k in 0..dual.jump_count() {
        if let Some((site, added)) = dual.jumps[k].support_change {
            if target.contains(&site) {
                if added {
                    inside += 1;
                } else {
                    inside -= 1;
                }
            }
        }
        if inside > 0 {
            if first.is_none() {
                first = Some(dual.dual_time(k));
            }
            active_since.get_or_insert(k);
        } else if active_since.take().is_some() {
            last = Some(dual.dual_time(k));
        }
    }
    if active_since.is_some() {
        last = Some(t);
    }
    (first, last)
}

/// Hand-reconstructed realization matching the worked ancestor-process
/// example on the path a-b-c-d-e.
pub mod worked_example {
    use super::*;
    use crate::graphical::Event;

    pub const A: Site = 0;
    pub const B: Site = 1;
    pub const C: Site = 2;
    pub const D: Site = 3;
    pub const E: Site = 4;
    /// Base time t.
    pub const T: f64 = 10.0;
    /// Dual time s at which the list is read off (forward time 1).
    pub const S: f64 = 9.0;

    pub fn topology() -> Topology {
        Topology::path(5).expect("path of five sites")
    }

    pub fn log(topo: &Topology) -> EventLog {
        let death = |time, site| Event { time, kind: EventKind::Death { site } };
        let arrow = |time, from, to, two_only| Event { time, kind: EventKind::Arrow { from, to, two_only } };
        let events = [
            // Forward window [0, 1]: turns 21012 into 10101.
            death(0.1, A),
            arrow(0.2, B, A, false),
            arrow(0.3, B, C, false),
            death(0.4, B),
            death(0.5, E),
            arrow(0.6, D, E, false),
            death(0.7, D),
            // Window (1, 10] seen by the dual from (c, 10).
            arrow(2.0, A, B, true),
            arrow(3.0, C, B, false),
            death(4.0, C),
            arrow(5.0, B, C, false),
            arrow(6.0, D, E, false),
            arrow(7.0, E, D, true),
            arrow(8.0, D, C, false),
        ];
        EventLog::from_events(topo, 1.0, 2.0, T, &events).expect("valid hand-built log")
    }

    /// Initial configuration: a=2, b=1, c=0, d=1, e=2.
    pub fn initial() -> Configuration {
        Configuration::from_states(vec![2, 1, 0, 1, 2]).expect("valid states")
    }

    /// Configuration at forward time t - s: a=c=e=1, b=d=0.
    pub fn at_read_time() -> Configuration {
        Configuration::from_states(vec![1, 0, 1, 0, 1]).expect("valid states")
    }

    pub fn expected_list() -> AncestorList {
        AncestorList::from_pairs(&[
            (B, Mark::One),
            (A, Mark::Two),
            (C, Mark::One),
            (D, Mark::One),
            (E, Mark::Two),
            (D, Mark::Two),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::worked_example as fig;
    use super::*;
    use crate::graphical::{sample_events, Event};

    fn arrow(time: f64, from: Site, to: Site, two_only: bool) -> Event {
        Event { time, kind: EventKind::Arrow { from, to, two_only } }
    }

    /// The literal priority scan: first 2, or first unblocked 1.
    fn flat_scan(list: &AncestorList, xi: &Configuration) -> u8 {
        for (site, mark) in list.entries() {
            match (xi.get(site), mark) {
                (2, _) => return 2,
                (1, Mark::One) => return 1,
                _ => {}
            }
        }
        0
    }

    #[test]
    fn empty_log_keeps_base_point() {
        let topo = Topology::torus(1, 4).unwrap();
        let log = EventLog::from_events(&topo, 1.0, 1.0, 2.0, &[]).unwrap();
        let dual = run_ancestors(&topo, &log, 2, 2.0).unwrap();
        assert_eq!(dual.jump_count(), 1);
        assert_eq!(dual.final_state().to_string(), "(2,1)");
        let xi0: Configuration = "0020".parse().unwrap();
        assert!(duality_check(&topo, &log, &xi0, 2, 2.0).unwrap());
    }

    #[test]
    fn lone_death_empties_the_list() {
        let topo = Topology::torus(1, 4).unwrap();
        let log =
            EventLog::from_events(&topo, 1.0, 1.0, 2.0, &[Event { time: 0.5, kind: EventKind::Death { site: 1 } }])
                .unwrap();
        let dual = run_ancestors(&topo, &log, 1, 2.0).unwrap();
        assert_eq!(dual.extinction_time(), Some(1.5));
        assert!(dual.state_at(1.5).is_empty());
        assert!(!dual.state_at(1.4).is_empty());
        assert_eq!(hit_times(&dual, &BTreeSet::from([0])), (None, None));
    }

    #[test]
    fn worked_example_list_and_psi() {
        let topo = fig::topology();
        let log = fig::log(&topo);
        let dual = run_ancestors(&topo, &log, fig::C, fig::T).unwrap();
        let view = dual.state_at(fig::S);
        let list = view.to_list(1000).unwrap();
        assert_eq!(list.to_string(), fig::expected_list().to_string());
        assert_eq!(view.to_string(), "(1,1);(0,2);(2,1);(3,1);(4,2);(3,2)");
        assert_eq!(view.psi(&fig::at_read_time()), 1);
        assert_eq!(list.psi(&fig::at_read_time()), 1);
        assert_eq!(fig::expected_list().psi(&fig::at_read_time()), 1);
        assert_eq!(view.support(), BTreeSet::from([0, 1, 2, 3, 4]));
        let at_read = crate::forward::evolve(&topo, &log, &fig::initial(), fig::T - fig::S).unwrap();
        assert_eq!(at_read, fig::at_read_time());
        assert!(duality_check(&topo, &log, &fig::initial(), fig::C, fig::T).unwrap());
        assert_eq!(crate::forward::evolve(&topo, &log, &fig::initial(), fig::T).unwrap().get(fig::C), 1);
        let both = reachable_set(&topo, &log, fig::C, fig::T, fig::S, PathKind::Both).unwrap();
        assert_eq!(both, BTreeSet::from([0, 1, 2, 3, 4]));
    }

    #[test]
    fn blocked_one_shields_its_lineage() {
        // a -> y unlabeled at 1, y -> x 2-only at 2; a holds 2, y holds 1.
        let topo = Topology::path(3).unwrap();
        let (a, y, x) = (0, 1, 2);
        let log =
            EventLog::from_events(&topo, 1.0, 2.0, 3.0, &[arrow(1.0, a, y, false), arrow(2.0, y, x, true)]).unwrap();
        let xi0 = Configuration::from_states(vec![2, 1, 0]).unwrap();
        let truth = crate::forward::evolve(&topo, &log, &xi0, 3.0).unwrap().get(x);
        assert_eq!(truth, 0);
        let dual = run_ancestors(&topo, &log, x, 3.0).unwrap();
        let list = dual.final_state().to_list(100).unwrap();
        assert_eq!(list.to_string(), "(2,1);(1,2);(0,2)");
        // The plain scan lets the 2 at `a` through; the structured scan does not.
        assert_eq!(flat_scan(&list, &xi0), 2);
        assert_eq!(list.psi(&xi0), truth);
        assert_eq!(dual.final_state().psi(&xi0), truth);
        assert!(duality_check(&topo, &log, &xi0, x, 3.0).unwrap());
    }

    #[test]
    fn psi_examples() {
        let xi = Configuration::from_states(vec![1, 0, 0]).unwrap();
        assert_eq!(psi(&AncestorList::empty(), &xi), 0);
        assert_eq!(psi(&AncestorList::from_pairs(&[(0, Mark::Two)]), &xi), 0);
        assert_eq!(psi(&AncestorList::from_pairs(&[(0, Mark::One)]), &xi), 1);
        let xi = Configuration::from_states(vec![1, 2, 0]).unwrap();
        assert_eq!(psi(&AncestorList::from_pairs(&[(2, Mark::One), (0, Mark::Two), (1, Mark::One)]), &xi), 2);
    }

    #[test]
    fn blocked_prefix_examples() {
        let (y, z, w) = (0, 1, 2);
        assert!(blocked_prefix(&AncestorList::from_pairs(&[(y, Mark::One), (z, Mark::Two)])).is_empty());
        assert_eq!(
            blocked_prefix(&AncestorList::from_pairs(&[(y, Mark::Two), (z, Mark::Two), (w, Mark::One)])),
            BTreeSet::from([y, z])
        );
        assert!(blocked_prefix(&AncestorList::empty()).is_empty());
    }

    #[test]
    fn list_text_round_trip() {
        let list: AncestorList = "(1,1);(0,2);(2,1)".parse().unwrap();
        assert_eq!(list.to_string(), "(1,1);(0,2);(2,1)");
        assert_eq!(list.len(), 3);
        assert!("".parse::<AncestorList>().unwrap().is_empty());
        assert!("(1,3)".parse::<AncestorList>().is_err());
        assert!("1,1".parse::<AncestorList>().is_err());
    }

    #[test]
    fn reachable_set_basics() {
        let topo = Topology::torus(1, 6).unwrap();
        let log = sample_events(&topo, 0.6, 1.8, 3.0, 17).unwrap();
        assert_eq!(reachable_set(&topo, &log, 3, 2.5, 0.0, PathKind::Both).unwrap(), BTreeSet::from([3]));
        assert!(reachable_set(&topo, &log, 3, 2.5, 3.0, PathKind::Both).is_err());
        for s in [0.3, 1.0, 2.5] {
            let one = reachable_set(&topo, &log, 3, 2.5, s, PathKind::One).unwrap();
            let two = reachable_set(&topo, &log, 3, 2.5, s, PathKind::Two).unwrap();
            let both = reachable_set(&topo, &log, 3, 2.5, s, PathKind::Both).unwrap();
            assert_eq!(both, &one | &two);
        }
    }

    /// Exhaustive path search straight from the definition: sequences of
    /// arrows at increasing times with no death on the waiting segments.
    fn brute_force_paths(
        topo: &Topology,
        log: &EventLog,
        x: Site,
        t: f64,
        floor: f64,
    ) -> (BTreeSet<Site>, BTreeSet<Site>) {
        fn no_death(log: &EventLog, site: Site, from: f64, to: f64) -> bool {
            !log.deaths(site).iter().any(|&d| d >= from && d <= to)
        }
        #[allow(clippy::too_many_arguments)]
        fn walk(
            topo: &Topology,
            log: &EventLog,
            site: Site,
            since: f64,
            labeled: bool,
            x: Site,
            t: f64,
            hits: &mut (bool, bool),
        ) {
            if site == x && no_death(log, x, since, t) {
                if labeled {
                    hits.1 = true;
                } else {
                    hits.0 = true;
                }
            }
            for &nb in topo.neighbors(site) {
                let e = topo.edge_id(site, nb).unwrap();
                for a in log.arrows(e) {
                    if a.time > since && a.time <= t && no_death(log, site, since, a.time) {
                        walk(topo, log, nb, a.time, labeled || a.two_only, x, t, hits);
                    }
                }
            }
        }
        let mut one = BTreeSet::new();
        let mut two = BTreeSet::new();
        for y in 0..topo.site_count() {
            let mut hits = (false, false);
            walk(topo, log, y, floor, false, x, t, &mut hits);
            if hits.0 {
                one.insert(y);
            }
            if hits.1 {
                two.insert(y);
            }
        }
        (one, two)
    }

    #[test]
    fn reachable_set_matches_path_enumeration() {
        let topo = Topology::path(4).unwrap();
        for seed in 0..40 {
            let log = sample_events(&topo, 0.5, 1.0, 1.5, seed).unwrap();
            for floor in [0.0, 0.4, 0.9] {
                let (one, two) = brute_force_paths(&topo, &log, 1, 1.5, floor);
                assert_eq!(reachable_set_down_to(&topo, &log, 1, 1.5, floor, PathKind::One).unwrap(), one);
                assert_eq!(reachable_set_down_to(&topo, &log, 1, 1.5, floor, PathKind::Two).unwrap(), two);
            }
        }
    }

    #[test]
    fn lazy_entries_agree_with_materialized_list() {
        let topo = Topology::tree_ball(2, 2).unwrap();
        for seed in 0..30 {
            let log = sample_events(&topo, 0.7, 1.4, 1.2, seed).unwrap();
            let dual = run_ancestors(&topo, &log, 0, 1.2).unwrap();
            for k in 0..dual.jump_count() {
                let view = dual.state(k);
                let Ok(list) = view.to_list(20_000) else { continue };
                let lazy: Vec<_> = view.entries().collect();
                let owned: Vec<_> = list.entries().collect();
                assert_eq!(lazy, owned);
                assert_eq!(view.support(), list.support());
                assert_eq!(view.sites_with_mark(Mark::One), list.sites_with_mark(Mark::One));
                assert_eq!(view.sites_with_mark(Mark::Two), list.sites_with_mark(Mark::Two));
                assert_eq!(view.blocked_prefix(), list.blocked_prefix());
            }
        }
    }

    #[test]
    fn hit_times_basics() {
        let topo = Topology::torus(1, 8).unwrap();
        let log = sample_events(&topo, 1.0, 2.0, 4.0, 3).unwrap();
        let dual = run_ancestors(&topo, &log, 2, 4.0).unwrap();
        let (first, last) = hit_times(&dual, &BTreeSet::from([2]));
        assert_eq!(first, Some(0.0));
        assert!(last.is_some());
        assert_eq!(hit_times(&dual, &BTreeSet::new()), (None, None));
    }
}
