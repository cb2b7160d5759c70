//! Finite graphs the process runs on: periodic tori standing in for Z^d,
//! radius-K balls standing in for the regular tree T_d, and small paths used
//! by the exact oracle.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense site identifier in `0..site_count`.
pub type Site = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    Torus,
    TreeBall,
    Path,
}

/// Serializable description of a topology, as it appears in run configs and
/// manifests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub kind: TopologyKind,
    /// Lattice dimension for tori, branching number for tree balls (each
    /// vertex of the infinite tree has `d + 1` neighbors). Ignored for paths.
    #[serde(default = "one")]
    pub d: usize,
    /// Side length L, tree radius K, or number of sites on a path.
    pub extent: usize,
}

fn one() -> usize {
    1
}

impl TopologySpec {
    pub fn build(&self) -> Result<Topology> {
        match self.kind {
            TopologyKind::Torus => Topology::torus(self.d, self.extent),
            TopologyKind::TreeBall => Topology::tree_ball(self.d, self.extent),
            TopologyKind::Path => Topology::path(self.extent),
        }
    }
}

impl fmt::Display for TopologySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TopologyKind::Torus => write!(f, "torus(d={}, L={})", self.d, self.extent),
            TopologyKind::TreeBall => write!(f, "tree-ball(d={}, K={})", self.d, self.extent),
            TopologyKind::Path => write!(f, "path(n={})", self.extent),
        }
    }
}

/// Immutable finite graph with compressed adjacency.
///
/// Directed edges are numbered by their position in the adjacency array, so
/// `edge_index(x, k)` for the k-th neighbor of x is a stable identifier used
/// to key per-edge random streams.
#[derive(Debug, Clone)]
pub struct Topology {
    spec: TopologySpec,
    offsets: Vec<usize>,
    neighbors: Vec<Site>,
    // Tree-ball only: parent pointer and depth from the root (site 0).
    parent: Vec<Option<Site>>,
    depth: Vec<usize>,
    labels: Vec<String>,
}

impl Topology {
    /// Periodic `d`-dimensional lattice of side `side`, sites in row-major
    /// order (coordinate 0 varies slowest).
    pub fn torus(d: usize, side: usize) -> Result<Self> {
        if d < 1 {
            return Err(Error::InvalidTopology("torus dimension must be at least 1".into()));
        }
        if side < 3 {
            return Err(Error::InvalidTopology(format!("torus side length must be at least 3, got {side}")));
        }
        let n = side.checked_pow(d as u32).ok_or_else(|| Error::InvalidTopology("torus too large".into()))?;
        let mut adjacency = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        let mut coords = vec![0usize; d];
        for x in 0..n {
            decode_coords(x, side, &mut coords);
            let mut nbrs = Vec::with_capacity(2 * d);
            for (axis, &c) in coords.iter().enumerate() {
                let stride = side.pow((d - 1 - axis) as u32);
                let up = if c + 1 == side { x + stride - side * stride } else { x + stride };
                let down = if c == 0 { x + (side - 1) * stride } else { x - stride };
                nbrs.push(down);
                nbrs.push(up);
            }
            adjacency.push(nbrs);
            let parts: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
            labels.push(format!("({})", parts.join(",")));
        }
        Ok(Self::from_adjacency(
            TopologySpec { kind: TopologyKind::Torus, d, extent: side },
            adjacency,
            vec![None; n],
            vec![0; n],
            labels,
        ))
    }

    /// Ball of radius `radius` around the root of T_d, in breadth-first order
    /// with the root at id 0. Sites at the maximal depth are leaves.
    pub fn tree_ball(d: usize, radius: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidTopology(format!("tree branching number must be at least 2, got {d}")));
        }
        if radius < 1 {
            return Err(Error::InvalidTopology("tree radius must be at least 1".into()));
        }
        let mut adjacency: Vec<Vec<Site>> = vec![Vec::new()];
        let mut parent = vec![None];
        let mut depth = vec![0];
        let mut labels = vec!["O".to_string()];
        let mut frontier = vec![0usize];
        for level in 1..=radius {
            let mut next = Vec::with_capacity(frontier.len() * d);
            for &p in &frontier {
                let kids = if level == 1 { d + 1 } else { d };
                for k in 0..kids {
                    let id = adjacency.len();
                    adjacency.push(vec![p]);
                    adjacency[p].push(id);
                    parent.push(Some(p));
                    depth.push(level);
                    labels.push(if level == 1 { k.to_string() } else { format!("{}.{k}", labels[p]) });
                    next.push(id);
                }
            }
            frontier = next;
        }
        Ok(Self::from_adjacency(
            TopologySpec { kind: TopologyKind::TreeBall, d, extent: radius },
            adjacency,
            parent,
            depth,
            labels,
        ))
    }

    /// Path graph on `n` sites; `n = 1` is a single isolated site.
    pub fn path(n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidTopology("path needs at least one site".into()));
        }
        let adjacency = (0..n)
            .map(|x| {
                let mut v = Vec::new();
                if x > 0 {
                    v.push(x - 1);
                }
                if x + 1 < n {
                    v.push(x + 1);
                }
                v
            })
            .collect();
        Ok(Self::from_adjacency(
            TopologySpec { kind: TopologyKind::Path, d: 1, extent: n },
            adjacency,
            vec![None; n],
            vec![0; n],
            (0..n).map(|x| x.to_string()).collect(),
        ))
    }

    fn from_adjacency(
        spec: TopologySpec,
        adjacency: Vec<Vec<Site>>,
        parent: Vec<Option<Site>>,
        depth: Vec<usize>,
        labels: Vec<String>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(adjacency.len() + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for nbrs in adjacency {
            neighbors.extend(nbrs);
            offsets.push(neighbors.len());
        }
        Self { spec, offsets, neighbors, parent, depth, labels }
    }

    pub fn spec(&self) -> TopologySpec {
        self.spec
    }

    pub fn kind(&self) -> TopologyKind {
        self.spec.kind
    }

    pub fn d(&self) -> usize {
        self.spec.d
    }

    pub fn extent(&self) -> usize {
        self.spec.extent
    }

    pub fn site_count(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Number of directed edges (each undirected edge counted twice).
    pub fn directed_edge_count(&self) -> usize {
        self.neighbors.len()
    }

    #[inline]
    pub fn neighbors(&self, x: Site) -> &[Site] {
        &self.neighbors[self.offsets[x]..self.offsets[x + 1]]
    }

    #[inline]
    pub fn degree(&self, x: Site) -> usize {
        self.offsets[x + 1] - self.offsets[x]
    }

    pub fn max_degree(&self) -> usize {
        (0..self.site_count()).map(|x| self.degree(x)).max().unwrap_or(0)
    }

    /// First directed-edge id owned by `x`; edge `edge_start(x) + k` is
    /// `x -> neighbors(x)[k]`.
    #[inline]
    pub fn edge_start(&self, x: Site) -> usize {
        self.offsets[x]
    }

    /// Directed edge id of `from -> to`, if they are adjacent.
    pub fn edge_id(&self, from: Site, to: Site) -> Option<usize> {
        if from >= self.site_count() {
            return None;
        }
        self.neighbors(from).iter().position(|&y| y == to).map(|k| self.offsets[from] + k)
    }

    /// Endpoints of a directed edge id.
    pub fn edge_endpoints(&self, edge: usize) -> (Site, Site) {
        let from = self.offsets.partition_point(|&o| o <= edge) - 1;
        (from, self.neighbors[edge])
    }

    pub fn label(&self, x: Site) -> &str {
        &self.labels[x]
    }

    /// Site with the given label, if any.
    pub fn site_by_label(&self, label: &str) -> Option<Site> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn root(&self) -> Option<Site> {
        (self.kind() == TopologyKind::TreeBall).then_some(0)
    }

    pub fn check_site(&self, x: Site) -> Result<()> {
        if x < self.site_count() {
            Ok(())
        } else {
            Err(Error::InvalidSite { site: x, site_count: self.site_count() })
        }
    }

    /// Graph distance by breadth-first search.
    pub fn distance(&self, x: Site, y: Site) -> Result<usize> {
        self.check_site(x)?;
        self.check_site(y)?;
        if x == y {
            return Ok(0);
        }
        let mut dist = vec![usize::MAX; self.site_count()];
        let mut queue = VecDeque::from([x]);
        dist[x] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    if v == y {
                        return Ok(dist[v]);
                    }
                    queue.push_back(v);
                }
            }
        }
        Err(Error::Disconnected { from: x, to: y })
    }

    /// Distances from `x` to every site (`usize::MAX` when unreachable).
    pub fn distances_from(&self, x: Site) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.site_count()];
        let mut queue = VecDeque::from([x]);
        dist[x] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    fn require_tree(&self, op: &str) -> Result<()> {
        if self.kind() == TopologyKind::TreeBall {
            Ok(())
        } else {
            Err(Error::NotATree(op.to_string()))
        }
    }

    /// Distance from the root; only meaningful on tree balls.
    pub fn depth(&self, x: Site) -> usize {
        self.depth[x]
    }

    pub fn parent(&self, x: Site) -> Option<Site> {
        self.parent[x]
    }

    /// Children of `x` pointing away from the root.
    pub fn children(&self, x: Site) -> impl Iterator<Item = Site> + '_ {
        let p = self.parent[x];
        self.neighbors(x).iter().copied().filter(move |&y| Some(y) != p && self.parent[y] == Some(x))
    }

    /// The sector S(x): the subtree rooted at `x` pointing away from the root.
    pub fn sector(&self, x: Site) -> Result<BTreeSet<Site>> {
        self.require_tree("sector")?;
        self.check_site(x)?;
        if x == 0 {
            return Err(Error::InvalidArgument("the sector of the root is undefined".into()));
        }
        let mut out = BTreeSet::new();
        let mut stack = vec![x];
        while let Some(u) = stack.pop() {
            out.insert(u);
            stack.extend(self.children(u));
        }
        Ok(out)
    }

    /// Sites within distance `k0` of the root.
    pub fn ball(&self, k0: usize) -> Result<BTreeSet<Site>> {
        self.require_tree("ball")?;
        self.check_radius(k0)?;
        Ok((0..self.site_count()).filter(|&x| self.depth[x] <= k0).collect())
    }

    /// Sites at distance exactly `k0 + 1` from the root.
    pub fn boundary(&self, k0: usize) -> Result<BTreeSet<Site>> {
        self.require_tree("boundary")?;
        self.check_radius(k0)?;
        Ok((0..self.site_count()).filter(|&x| self.depth[x] == k0 + 1).collect())
    }

    fn check_radius(&self, k0: usize) -> Result<()> {
        if k0 >= self.extent() {
            Err(Error::InvalidArgument(format!("inner radius {k0} must be below the tree radius {}", self.extent())))
        } else {
            Ok(())
        }
    }

    /// Follows first children from `x` down to the deepest level, returning
    /// the visited sites (including `x`).
    pub fn leftmost_descent(&self, x: Site) -> Vec<Site> {
        let mut out = vec![x];
        let mut cur = x;
        while let Some(c) = self.children(cur).next() {
            out.push(c);
            cur = c;
        }
        out
    }
}

fn decode_coords(mut x: usize, side: usize, coords: &mut [usize]) {
    for c in coords.iter_mut().rev() {
        *c = x % side;
        x /= side;
    }
}
