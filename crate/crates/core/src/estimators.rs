//! Monte Carlo estimators: survival probabilities, critical-value brackets,
//! upper-invariant snapshots, cluster statistics, oracle comparisons and the
//! batch experiments around the convergence theorems.
//!
//! Infinite-time events are replaced by finite-horizon proxies: "survives
//! forever" by "nonempty at `t_max`", and "occupies x infinitely often" by
//! "occupies x at some time in `[t_probe, t_max]`".

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{trajectory, Configuration};
use crate::graphical::sample_events;
use crate::oracle::{build_generator, marginal, transient_distribution, MarginalTable};
use crate::report::{Cell, Table};
use crate::sim::Simulator;
use crate::stats::{combined_se, product_se, Proportion};
use crate::streams::{derive_seed, replica_seed};
use crate::topology::{Site, Topology, TopologyKind};

/// Runs `f` on replica seeds `0..replicas` in parallel; results are in
/// replica order.
pub fn replicate<T, F>(replicas: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..replicas).into_par_iter().map(|i| f(replica_seed(seed, i))).collect()
}

fn try_replicate<T, F>(replicas: u64, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    replicate(replicas, seed, f).into_iter().collect()
}

fn check_replicas(replicas: u64) -> Result<()> {
    if replicas < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 replicas, got {replicas}")));
    }
    Ok(())
}

fn check_horizon(t_max: f64) -> Result<()> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::InvalidTime(format!("t_max must be positive and finite, got {t_max}")));
    }
    Ok(())
}

fn check_sites(topo: &Topology, sites: impl IntoIterator<Item = Site>) -> Result<()> {
    sites.into_iter().try_for_each(|x| topo.check_site(x))
}

/// Survival probability estimate with a 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: u64,
    pub horizon: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
    /// Fraction alive at `horizon / 2` but empty at `horizon`.
    pub rho_diagnostic: Option<f64>,
}

impl SurvivalEstimate {
    fn from_proportion(p: Proportion, horizon: f64, seed: u64, rho: Option<f64>) -> Self {
        Self {
            estimate: p.estimate,
            std_error: p.std_error,
            replicas: p.trials,
            horizon,
            ci_low: p.ci_low,
            ci_high: p.ci_high,
            seed,
            rho_diagnostic: rho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeSurvivalEstimate {
    pub alpha1: SurvivalEstimate,
    pub alpha2: SurvivalEstimate,
}

/// Configuration equal to `state` on each listed sector `S(y)` and to
/// `default` elsewhere. The listed sites must lie on one sphere `∂B_k`.
pub fn make_sector_configuration(topo: &Topology, assignments: &[(Site, u8)], default: u8) -> Result<Configuration> {
    if topo.kind() != TopologyKind::TreeBall {
        return Err(Error::NotATree("sector configurations".into()));
    }
    let mut xi = Configuration::filled(topo.site_count(), default)?;
    let depths: BTreeSet<usize> = assignments.iter().map(|&(y, _)| topo.depth(y)).collect();
    if depths.len() > 1 {
        return Err(Error::InvalidArgument("sector roots must lie on a common sphere".into()));
    }
    let mut seen = BTreeSet::new();
    for &(y, state) in assignments {
        topo.check_site(y)?;
        if !seen.insert(y) {
            return Err(Error::InvalidArgument(format!("sector of site {y} listed twice")));
        }
        for x in topo.sector(y)? {
            xi.set(x, state)?;
        }
    }
    Ok(xi)
}

/// α_A proxy: fraction of replicas of the single-type process at rate
/// `lambda` from `a0` still alive at `t_max`.
pub fn estimate_survival(
    topo: &Topology,
    lambda: f64,
    a0: &BTreeSet<Site>,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> Result<SurvivalEstimate> {
    check_replicas(replicas)?;
    check_horizon(t_max)?;
    check_sites(topo, a0.iter().copied())?;
    let runs = try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::single_type(topo, lambda, a0.iter().copied(), s)?;
        sim.run_until(t_max / 2.0);
        let mid = !sim.is_extinct();
        sim.run_until(t_max);
        Ok((mid, !sim.is_extinct()))
    })?;
    let alive = Proportion::from_flags(runs.iter().map(|r| r.1));
    let rho = runs.iter().filter(|r| r.0 && !r.1).count() as f64 / replicas as f64;
    Ok(SurvivalEstimate::from_proportion(alive, t_max, seed, Some(rho)))
}

/// ρ(T): fraction of replicas from `{x}` alive at `t` but empty at `t_max`.
pub fn estimate_rho(
    topo: &Topology,
    lambda: f64,
    x: Site,
    t: f64,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> Result<Proportion> {
    check_replicas(replicas)?;
    check_horizon(t_max)?;
    topo.check_site(x)?;
    if !(t >= 0.0 && t < t_max) {
        return Err(Error::InvalidTime(format!("need 0 <= T < t_max, got T = {t}, t_max = {t_max}")));
    }
    let flags = try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::single_type(topo, lambda, [x], s)?;
        sim.run_until(t);
        let alive = !sim.is_extinct();
        sim.run_until(t_max);
        Ok(alive && sim.is_extinct())
    })?;
    Ok(Proportion::from_flags(flags))
}

/// α_η^1 and α_η^2 proxies at `t_max`.
pub fn estimate_type_survival(
    topo: &Topology,
    lambda1: f64,
    lambda2: f64,
    eta: &Configuration,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> Result<TypeSurvivalEstimate> {
    check_replicas(replicas)?;
    check_horizon(t_max)?;
    if lambda1 > lambda2 {
        return Err(Error::InvalidRates(format!("need lambda1 <= lambda2, got {lambda1} > {lambda2}")));
    }
    let counts = try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::new(topo, lambda1, lambda2, eta, s)?;
        sim.run_until(t_max);
        Ok(sim.counts())
    })?;
    let two = Proportion::from_flags(counts.iter().map(|c| c[2] > 0));
    let one = Proportion::from_flags(counts.iter().map(|c| c[2] == 0 && c[1] > 0));
    Ok(TypeSurvivalEstimate {
        alpha1: SurvivalEstimate::from_proportion(one, t_max, seed, None),
        alpha2: SurvivalEstimate::from_proportion(two, t_max, seed, None),
    })
}

fn visits_late(sim: &mut Simulator<'_>, x: Site, t_probe: f64, t_max: f64) -> bool {
    sim.run_until(t_probe);
    if sim.get(x) != 0 {
        return true;
    }
    while let Some(tr) = sim.step(t_max) {
        if tr.site == x && tr.to != 0 {
            return true;
        }
    }
    false
}

/// Strong-survival proxy: fraction of replicas from `{x}` that occupy `x`
/// at some time in `[t_probe, t_max]`.
pub fn estimate_strong_survival(
    topo: &Topology,
    lambda: f64,
    x: Site,
    t_probe: f64,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> Result<SurvivalEstimate> {
    check_replicas(replicas)?;
    check_horizon(t_max)?;
    topo.check_site(x)?;
    if !(t_probe >= 0.0 && t_probe < t_max) {
        return Err(Error::InvalidTime(format!("need 0 <= t_probe < t_max, got {t_probe}, {t_max}")));
    }
    let flags = try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::single_type(topo, lambda, [x], s)?;
        Ok(visits_late(&mut sim, x, t_probe, t_max))
    })?;
    Ok(SurvivalEstimate::from_proportion(Proportion::from_flags(flags), t_max, seed, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurvivalKind {
    Weak,
    Strong,
}

/// Per-probe settings of a critical-value bisection. `t_probe` is used by
/// the strong proxy only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub site: Site,
    pub t_max: f64,
    pub t_probe: f64,
    pub replicas: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub lambda: f64,
    pub estimate: SurvivalEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalEstimate {
    pub kind: SurvivalKind,
    pub threshold: f64,
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub probes: Vec<Probe>,
}

impl CriticalEstimate {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["step", "lambda", "estimate", "ci_low", "ci_high", "above_threshold"]);
        for (i, p) in self.probes.iter().enumerate() {
            t.push(vec![
                i.into(),
                p.lambda.into(),
                p.estimate.estimate.into(),
                p.estimate.ci_low.into(),
                p.estimate.ci_high.into(),
                (p.estimate.estimate >= self.threshold).into(),
            ]);
        }
        t
    }
}

fn survival_proxy(topo: &Topology, kind: SurvivalKind, lambda: f64, p: &ProbeParams) -> Result<SurvivalEstimate> {
    match kind {
        SurvivalKind::Weak => estimate_survival(topo, lambda, &BTreeSet::from([p.site]), p.t_max, p.replicas, p.seed),
        SurvivalKind::Strong => estimate_strong_survival(topo, lambda, p.site, p.t_probe, p.t_max, p.replicas, p.seed),
    }
}

/// Bisection for the rate at which the chosen survival proxy crosses
/// `threshold`. Every probe uses the same seed.
pub fn estimate_critical(
    topo: &Topology,
    kind: SurvivalKind,
    bracket: (f64, f64),
    threshold: f64,
    steps: usize,
    probe: &ProbeParams,
) -> Result<CriticalEstimate> {
    let (mut lo, mut hi) = bracket;
    if !(lo >= 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::BadBracket(format!("({lo}, {hi}) is not an interval of rates")));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let mut probes = Vec::with_capacity(steps + 2);
    for lambda in [lo, hi] {
        probes.push(Probe { lambda, estimate: survival_proxy(topo, kind, lambda, probe)? });
    }
    let (p_lo, p_hi) = (probes[0].estimate.estimate, probes[1].estimate.estimate);
    if !(p_lo < threshold && threshold <= p_hi) {
        return Err(Error::BadBracket(format!("proxy is {p_lo} at {lo} and {p_hi} at {hi}, threshold {threshold}")));
    }
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        let estimate = survival_proxy(topo, kind, mid, probe)?;
        if estimate.estimate >= threshold {
            hi = mid;
        } else {
            lo = mid;
        }
        probes.push(Probe { lambda: mid, estimate });
    }
    Ok(CriticalEstimate { kind, threshold, lambda_low: lo, lambda_high: hi, probes })
}

/// Empirical joint occupancy of a few sites. Pattern bit `i` is set when
/// `sites[i]` is occupied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTable {
    pub sites: Vec<Site>,
    pub counts: Vec<u64>,
    pub replicas: u64,
}

impl OccupancyTable {
    pub fn probability(&self, pattern: usize) -> Proportion {
        Proportion::new(self.counts[pattern], self.replicas)
    }

    /// P(none of the sites occupied).
    pub fn miss_probability(&self) -> Proportion {
        self.probability(0)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["pattern", "count", "probability", "ci_low", "ci_high"]);
        for (pattern, &count) in self.counts.iter().enumerate() {
            let p = self.probability(pattern);
            let bits: String = (0..self.sites.len()).map(|i| if pattern >> i & 1 == 1 { '1' } else { '0' }).collect();
            t.push(vec![bits.into(), count.into(), p.estimate.into(), p.ci_low.into(), p.ci_high.into()]);
        }
        t
    }
}

/// Finite-dimensional snapshot of the single-type process from full
/// occupancy at `t_relax`.
pub fn sample_upper_invariant(
    topo: &Topology,
    lambda: f64,
    t_relax: f64,
    sites: &[Site],
    replicas: u64,
    seed: u64,
) -> Result<OccupancyTable> {
    check_sites(topo, sites.iter().copied())?;
    if sites.len() > 16 {
        return Err(Error::InvalidArgument("at most 16 sites per snapshot".into()));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("need at least one replica".into()));
    }
    let patterns = try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::single_type(topo, lambda, 0..topo.site_count(), s)?;
        sim.run_until(t_relax);
        Ok(sites.iter().enumerate().fold(0usize, |acc, (i, &x)| acc | (usize::from(sim.get(x) != 0) << i)))
    })?;
    let mut counts = vec![0u64; 1 << sites.len()];
    for p in patterns {
        counts[p] += 1;
    }
    Ok(OccupancyTable { sites: sites.to_vec(), counts, replicas })
}

/// Lifetime and spread of one cluster started from a single site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub lifetime: f64,
    pub censored: bool,
    pub radius: usize,
}

pub fn cluster_stats(
    topo: &Topology,
    lambda: f64,
    x: Site,
    t_max: f64,
    replicas: u64,
    seed: u64,
) -> Result<Vec<ClusterStats>> {
    check_horizon(t_max)?;
    topo.check_site(x)?;
    let dist = topo.distances_from(x);
    try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::single_type(topo, lambda, [x], s)?;
        let mut radius = 0;
        let mut lifetime = t_max;
        while let Some(tr) = sim.step(t_max) {
            if tr.to != 0 {
                radius = radius.max(dist[tr.site]);
            } else if sim.is_extinct() {
                lifetime = tr.time;
            }
        }
        Ok(ClusterStats { lifetime, censored: !sim.is_extinct(), radius })
    })
}

/// ε_M: fraction of clusters that died out after reaching distance `m`.
pub fn epsilon_m(stats: &[ClusterStats], m: usize) -> f64 {
    stats.iter().filter(|c| !c.censored && c.radius >= m).count() as f64 / stats.len().max(1) as f64
}

pub fn cluster_table(stats: &[ClusterStats], max_radius: usize) -> Table {
    let mut t = Table::new(&["m", "epsilon_m", "died_out", "censored"]);
    let died = stats.iter().filter(|c| !c.censored).count();
    for m in 0..=max_radius {
        t.push(vec![m.into(), epsilon_m(stats, m).into(), died.into(), (stats.len() - died).into()]);
    }
    t
}

// ---------------------------------------------------------------------------
// Oracle comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCell {
    pub t: f64,
    pub sites: Vec<Site>,
    pub pattern: Vec<u8>,
    pub exact: f64,
    pub empirical: f64,
    pub std_error: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleComparison {
    pub replicas: u64,
    pub sigmas: f64,
    pub cells: Vec<OracleCell>,
    /// Total variation on the joint law of the first three sites, per time.
    pub joint_tv: Vec<(f64, f64)>,
}

impl OracleComparison {
    pub fn fraction_within(&self) -> f64 {
        self.cells.iter().filter(|c| c.within).count() as f64 / self.cells.len().max(1) as f64
    }

    pub fn max_tv(&self) -> f64 {
        self.joint_tv.iter().map(|&(_, tv)| tv).fold(0.0, f64::max)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["t", "sites", "pattern", "exact", "empirical", "std_error", "within"]);
        for c in &self.cells {
            let sites = c.sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
            let pattern: String = c.pattern.iter().map(|d| char::from(b'0' + d)).collect();
            t.push(vec![
                c.t.into(),
                sites.into(),
                pattern.into(),
                c.exact.into(),
                c.empirical.into(),
                c.std_error.into(),
                c.within.into(),
            ]);
        }
        t
    }
}

/// Compares single-site and pair marginals of the graphical construction
/// with the exact transient law. Each replica samples its own event log.
#[allow(clippy::too_many_arguments)]
pub fn compare_with_oracle(
    topo: &Topology,
    lambda1: f64,
    lambda2: f64,
    xi0: &Configuration,
    times: &[f64],
    replicas: u64,
    seed: u64,
    sigmas: f64,
) -> Result<OracleComparison> {
    let gen = build_generator(topo, lambda1, lambda2)?;
    let horizon = times.iter().copied().fold(0.0, f64::max);
    if horizon <= 0.0 || times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidTime("need increasing positive comparison times".into()));
    }
    let n = topo.site_count();
    let codes = try_replicate(replicas, seed, |s| {
        let log = sample_events(topo, lambda1, lambda2, horizon, s)?;
        let traj = trajectory(topo, &log, xi0, times)?;
        Ok(traj.configurations.iter().map(crate::oracle::encode).collect::<Vec<_>>())
    })?;
    let mut groups: Vec<Vec<Site>> = (0..n).map(|x| vec![x]).collect();
    for a in 0..n {
        for b in a + 1..n {
            groups.push(vec![a, b]);
        }
    }
    let joint: Vec<Site> = (0..n.min(3)).collect();
    let mut cells = Vec::new();
    let mut joint_tv = Vec::new();
    for (ti, &t) in times.iter().enumerate() {
        let exact = transient_distribution(&gen, xi0, t)?;
        let mut counts = vec![0u64; exact.probabilities().len()];
        for c in &codes {
            counts[c[ti]] += 1;
        }
        let empirical = crate::oracle::ExactDistribution::from_probabilities(
            t,
            n,
            counts.iter().map(|&c| c as f64 / replicas as f64).collect(),
        )?;
        for sites in &groups {
            let e: MarginalTable = marginal(&exact, sites)?;
            let m = marginal(&empirical, sites)?;
            for (i, (&pe, &pm)) in e.probs.iter().zip(&m.probs).enumerate() {
                let se = (pe * (1.0 - pe) / replicas as f64).sqrt();
                cells.push(OracleCell {
                    t,
                    sites: sites.clone(),
                    pattern: e.pattern(i),
                    exact: pe,
                    empirical: pm,
                    std_error: se,
                    within: (pm - pe).abs() <= sigmas * se + 1e-12,
                });
            }
        }
        let e = marginal(&exact, &joint)?;
        let m = marginal(&empirical, &joint)?;
        let tv = 0.5 * e.probs.iter().zip(&m.probs).map(|(a, b)| (a - b).abs()).sum::<f64>();
        joint_tv.push((t, tv));
    }
    Ok(OracleComparison { replicas, sigmas, cells, joint_tv })
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// A named pass/fail verdict of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Simulates `replicas` runs and records `observe` at each grid time.
#[allow(clippy::too_many_arguments)]
fn observe_grid<T, F>(
    topo: &Topology,
    lambda1: f64,
    lambda2: f64,
    xi0: &Configuration,
    grid: &[f64],
    replicas: u64,
    seed: u64,
    observe: F,
) -> Result<Vec<Vec<T>>>
where
    T: Send,
    F: Fn(&Simulator<'_>) -> T + Sync + Send,
{
    if grid.windows(2).any(|w| w[0] > w[1]) || grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidTime("time grid must be nondecreasing and nonnegative".into()));
    }
    try_replicate(replicas, seed, |s| {
        let mut sim = Simulator::new(topo, lambda1, lambda2, xi0, s)?;
        Ok(grid
            .iter()
            .map(|&t| {
                sim.run_until(t);
                observe(&sim)
            })
            .collect())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Params {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Root of the sector holding 1s.
    pub y: Site,
    pub x_list: Vec<Site>,
    pub t_grid: Vec<f64>,
    /// State outside the sector.
    pub default_state: u8,
    /// Horizon for the separately estimated α̂(λ1), started from the root.
    pub alpha_t_max: f64,
    pub replicas: u64,
    pub seed: u64,
    pub sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Row {
    pub x: Site,
    pub depth: usize,
    pub distance_to_y: usize,
    pub t: f64,
    pub p_one: Proportion,
    pub lower_bound: f64,
    pub lower_flag: bool,
    pub p_two: Proportion,
    pub upper_bound: f64,
    pub upper_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub params: Theorem1Params,
    pub alpha: SurvivalEstimate,
    pub rows: Vec<Theorem1Row>,
}

impl Theorem1Report {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.lower_flag || r.upper_flag).count()
    }

    pub fn checks(&self) -> Vec<Check> {
        let lower = self.rows.iter().filter(|r| r.lower_flag).count();
        let upper = self.rows.iter().filter(|r| r.upper_flag).count();
        let vacuous = self.rows.iter().filter(|r| r.lower_bound <= 0.0).count();
        vec![
            Check::new(
                "lower-bound",
                lower == 0,
                format!(
                    "{lower} of {} rows flagged, {vacuous} rows with vacuous bound, alpha = {:.4}",
                    self.rows.len(),
                    self.alpha.estimate
                ),
            ),
            Check::new("upper-bound", upper == 0, format!("{upper} of {} rows flagged", self.rows.len())),
        ]
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "x",
            "depth",
            "distance_to_y",
            "t",
            "p_one",
            "se_one",
            "lower_bound",
            "lower_flag",
            "p_two",
            "se_two",
            "upper_bound",
            "upper_flag",
        ]);
        for r in &self.rows {
            t.push(vec![
                r.x.into(),
                r.depth.into(),
                r.distance_to_y.into(),
                r.t.into(),
                r.p_one.estimate.into(),
                r.p_one.std_error.into(),
                r.lower_bound.into(),
                r.lower_flag.into(),
                r.p_two.estimate.into(),
                r.p_two.std_error.into(),
                r.upper_bound.into(),
                r.upper_flag.into(),
            ]);
        }
        t
    }
}

/// Sector start: ξ0 ≡ 1 on S(y). Compares P̂(ξ_t(x) = 1) with
/// α̂(λ1) − d^{−|x−𝒪|/2} and P̂(ξ_t(x) = 2) with d^{−|x−y|/2}.
pub fn experiment_theorem1(topo: &Topology, p: &Theorem1Params) -> Result<Theorem1Report> {
    check_replicas(p.replicas)?;
    check_sites(topo, p.x_list.iter().copied().chain([p.y]))?;
    let sector = topo.sector(p.y)?;
    if let Some(&x) = p.x_list.iter().find(|x| !sector.contains(x)) {
        return Err(Error::InvalidArgument(format!("site {x} is not in the sector of {}", p.y)));
    }
    let root = topo.root().ok_or_else(|| Error::NotATree("theorem1".into()))?;
    let xi0 = make_sector_configuration(topo, &[(p.y, 1)], p.default_state)?;
    let alpha = estimate_survival(
        topo,
        p.lambda1,
        &BTreeSet::from([root]),
        p.alpha_t_max,
        p.replicas,
        derive_seed(p.seed, "alpha"),
    )?;
    let xs = p.x_list.clone();
    let obs =
        observe_grid(topo, p.lambda1, p.lambda2, &xi0, &p.t_grid, p.replicas, derive_seed(p.seed, "main"), |sim| {
            xs.iter().map(|&x| sim.get(x)).collect::<Vec<u8>>()
        })?;
    let scale = 1.0 / (topo.d() as f64).sqrt();
    let mut rows = Vec::new();
    for (xi, &x) in p.x_list.iter().enumerate() {
        let depth = topo.distance(root, x)?;
        let dy = topo.distance(p.y, x)?;
        for (ti, &t) in p.t_grid.iter().enumerate() {
            let p_one = Proportion::from_flags(obs.iter().map(|r| r[ti][xi] == 1));
            let p_two = Proportion::from_flags(obs.iter().map(|r| r[ti][xi] == 2));
            let lower_bound = alpha.estimate - scale.powi(depth as i32);
            let upper_bound = scale.powi(dy as i32);
            let se_low = combined_se(&[p_one.std_error, alpha.std_error]);
            rows.push(Theorem1Row {
                x,
                depth,
                distance_to_y: dy,
                t,
                p_one,
                lower_bound,
                lower_flag: lower_bound > 0.0 && p_one.estimate < lower_bound - p.sigmas * se_low,
                p_two,
                upper_bound,
                upper_flag: p_two.estimate > upper_bound + p.sigmas * p_two.std_error,
            });
        }
    }
    Ok(Theorem1Report { params: p.clone(), alpha, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Params {
    pub lambda1: f64,
    pub lambda2: f64,
    pub x: Site,
    pub t_grid: Vec<f64>,
    pub l_grid: Vec<usize>,
    pub epsilon: f64,
    pub replicas: u64,
    pub seed: u64,
    pub sigmas: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Report {
    pub params: Theorem2Params,
    /// P̂(ξ_t(x) = 1, |²ξ_t| ≥ 1) per grid time.
    pub coexist: Vec<Proportion>,
    /// P̂(1 ≤ |²ξ_t| ≤ L), indexed `[t][L]`.
    pub small_twos: Vec<Vec<Proportion>>,
}

fn nonincreasing_within(series: &[Proportion], sigmas: f64) -> bool {
    series.windows(2).all(|w| {
        w[1].estimate <= w[0].estimate + sigmas * combined_se(&[w[0].std_error_floor(), w[1].std_error_floor()])
    })
}

impl Theorem2Report {
    pub fn checks(&self) -> Vec<Check> {
        let p = &self.params;
        let mut out = Vec::new();
        let last = self.coexist.last().map_or(0.0, |q| q.estimate);
        out.push(Check::new(
            "coexistence-decay",
            nonincreasing_within(&self.coexist, p.sigmas) && last < p.epsilon,
            format!(
                "series [{}], terminal {last:.5} vs epsilon {}",
                self.coexist.iter().map(|q| format!("{:.5}", q.estimate)).collect::<Vec<_>>().join(", "),
                p.epsilon
            ),
        ));
        for (li, &l) in p.l_grid.iter().enumerate() {
            let series: Vec<Proportion> = self.small_twos.iter().map(|row| row[li]).collect();
            let last = series.last().map_or(0.0, |q| q.estimate);
            out.push(Check::new(
                format!("small-twos-{l}"),
                nonincreasing_within(&series, p.sigmas) && last < p.epsilon,
                format!(
                    "series [{}], terminal {last:.5}",
                    series.iter().map(|q| format!("{:.5}", q.estimate)).collect::<Vec<_>>().join(", ")
                ),
            ));
        }
        out
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["quantity", "t", "l", "estimate", "std_error", "ci_low", "ci_high"]);
        for (ti, &time) in self.params.t_grid.iter().enumerate() {
            let q = self.coexist[ti];
            t.push(vec![
                "coexist".into(),
                time.into(),
                Cell::Empty,
                q.estimate.into(),
                q.std_error.into(),
                q.ci_low.into(),
                q.ci_high.into(),
            ]);
            for (li, &l) in self.params.l_grid.iter().enumerate() {
                let q = self.small_twos[ti][li];
                t.push(vec![
                    "small_twos".into(),
                    time.into(),
                    l.into(),
                    q.estimate.into(),
                    q.std_error.into(),
                    q.ci_low.into(),
                    q.ci_high.into(),
                ]);
            }
        }
        t
    }
}

/// Decay of P(ξ_t(x) = 1 and |²ξ_t| ≥ 1) and of P(1 ≤ |²ξ_t| ≤ L).
pub fn experiment_theorem2(topo: &Topology, eta: &Configuration, p: &Theorem2Params) -> Result<Theorem2Report> {
    check_replicas(p.replicas)?;
    topo.check_site(p.x)?;
    let x = p.x;
    let obs = observe_grid(topo, p.lambda1, p.lambda2, eta, &p.t_grid, p.replicas, p.seed, |sim| {
        (sim.get(x), sim.counts()[2])
    })?;
    let coexist = (0..p.t_grid.len())
        .map(|ti| Proportion::from_flags(obs.iter().map(|r| r[ti].0 == 1 && r[ti].1 >= 1)))
        .collect();
    let small_twos = (0..p.t_grid.len())
        .map(|ti| {
            p.l_grid.iter().map(|&l| Proportion::from_flags(obs.iter().map(|r| (1..=l).contains(&r[ti].1)))).collect()
        })
        .collect();
    Ok(Theorem2Report { params: p.clone(), coexist, small_twos })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub a: Vec<Site>,
    pub t_eval: f64,
    /// Horizon for the separately estimated survival probabilities.
    pub t_max: f64,
    pub replicas: u64,
    pub seed: u64,
    pub sigmas: f64,
    /// Allowance for truncating "forever" at a finite horizon.
    pub allowance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRow {
    pub label: String,
    pub observed: Proportion,
    pub factors: Vec<(String, f64, f64)>,
    pub predicted: f64,
    pub predicted_se: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub flagged: bool,
}

impl MixtureRow {
    fn new(label: &str, observed: Proportion, factors: Vec<(String, f64, f64)>, sigmas: f64, allowance: f64) -> Self {
        let (mut predicted, mut predicted_se) = (1.0, 0.0);
        for &(_, v, se) in &factors {
            predicted_se = product_se(predicted, predicted_se, v, se);
            predicted *= v;
        }
        let deviation = (observed.estimate - predicted).abs();
        let tolerance = sigmas * combined_se(&[observed.std_error, predicted_se]) + allowance;
        Self {
            label: label.into(),
            observed,
            factors,
            predicted,
            predicted_se,
            deviation,
            tolerance,
            flagged: deviation > tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureReport {
    pub params: MixtureParams,
    pub rows: Vec<MixtureRow>,
}

impl MixtureReport {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn checks(&self) -> Vec<Check> {
        self.rows
            .iter()
            .map(|r| {
                Check::new(
                    r.label.clone(),
                    !r.flagged,
                    format!(
                        "observed {:.5}, predicted {:.5}, deviation {:.5}, tolerance {:.5}",
                        r.observed.estimate, r.predicted, r.deviation, r.tolerance
                    ),
                )
            })
            .collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "quantity",
            "observed",
            "observed_se",
            "factors",
            "predicted",
            "predicted_se",
            "deviation",
            "tolerance",
            "flagged",
        ]);
        for r in &self.rows {
            let factors = r.factors.iter().map(|(n, v, _)| format!("{n}={v}")).collect::<Vec<_>>().join(" ");
            t.push(vec![
                r.label.clone().into(),
                r.observed.estimate.into(),
                r.observed.std_error.into(),
                factors.into(),
                r.predicted.into(),
                r.predicted_se.into(),
                r.deviation.into(),
                r.tolerance.into(),
                r.flagged.into(),
            ]);
        }
        t
    }
}

fn hits(sim: &Simulator<'_>, a: &[Site], state: u8) -> bool {
    a.iter().any(|&x| sim.get(x) == state)
}

fn check_mixture(topo: &Topology, p: &MixtureParams) -> Result<()> {
    check_replicas(p.replicas)?;
    check_horizon(p.t_max)?;
    check_sites(topo, p.a.iter().copied())?;
    if p.a.is_empty() {
        return Err(Error::InvalidArgument("the observation set A is empty".into()));
    }
    Ok(())
}

/// P̂(ⁱξ_t ∩ A ≠ ∅) against α̂_η^i · α̂_A(λ_i), for i = 1, 2.
pub fn experiment_theorem3(topo: &Topology, eta: &Configuration, p: &MixtureParams) -> Result<MixtureReport> {
    check_mixture(topo, p)?;
    let a = p.a.clone();
    let obs =
        observe_grid(topo, p.lambda1, p.lambda2, eta, &[p.t_eval], p.replicas, derive_seed(p.seed, "main"), |sim| {
            (hits(sim, &a, 1), hits(sim, &a, 2))
        })?;
    let types =
        estimate_type_survival(topo, p.lambda1, p.lambda2, eta, p.t_max, p.replicas, derive_seed(p.seed, "types"))?;
    let a_set: BTreeSet<Site> = p.a.iter().copied().collect();
    let mut rows = Vec::new();
    for (i, lambda, alpha_eta) in [(1, p.lambda1, types.alpha1), (2, p.lambda2, types.alpha2)] {
        let alpha_a =
            estimate_survival(topo, lambda, &a_set, p.t_max, p.replicas, derive_seed(p.seed, &format!("alpha-a-{i}")))?;
        let observed = Proportion::from_flags(obs.iter().map(|r| if i == 1 { r[0].0 } else { r[0].1 }));
        rows.push(MixtureRow::new(
            &format!("type-{i}"),
            observed,
            vec![
                (format!("alpha_eta_{i}"), alpha_eta.estimate, alpha_eta.std_error),
                (format!("alpha_A_{i}"), alpha_a.estimate, alpha_a.std_error),
            ],
            p.sigmas,
            p.allowance,
        ));
    }
    Ok(MixtureReport { params: p.clone(), rows })
}

/// P̂(¹ξ_t ∩ A ≠ ∅, ²ξ_t = ∅) against (1 − α̂_η^2) · μ̂(ζ ∩ A ≠ ∅), with μ̂
/// from the rate-λ1 single-type process started at ¹η.
pub fn experiment_theorem4(topo: &Topology, eta: &Configuration, p: &MixtureParams) -> Result<MixtureReport> {
    check_mixture(topo, p)?;
    let a = p.a.clone();
    let obs =
        observe_grid(topo, p.lambda1, p.lambda2, eta, &[p.t_eval], p.replicas, derive_seed(p.seed, "main"), |sim| {
            hits(sim, &a, 1) && sim.counts()[2] == 0
        })?;
    let types =
        estimate_type_survival(topo, p.lambda1, p.lambda2, eta, p.t_max, p.replicas, derive_seed(p.seed, "types"))?;
    let ones = eta.ones();
    let mu_flags = try_replicate(p.replicas, derive_seed(p.seed, "mu"), |s| {
        let mut sim = Simulator::single_type(topo, p.lambda1, ones.iter().copied(), s)?;
        sim.run_until(p.t_eval);
        Ok(hits(&sim, &a, 2))
    })?;
    let mu = Proportion::from_flags(mu_flags);
    let observed = Proportion::from_flags(obs.iter().map(|r| r[0]));
    let rows = vec![MixtureRow::new(
        "type-1-only",
        observed,
        vec![
            ("one_minus_alpha_eta_2".into(), 1.0 - types.alpha2.estimate, types.alpha2.std_error),
            ("mu_A".into(), mu.estimate, mu.std_error),
        ],
        p.sigmas,
        p.allowance,
    )];
    Ok(MixtureReport { params: p.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sector_configurations() {
        let topo = Topology::tree_ball(2, 3).unwrap();
        let y = topo.site_by_label("0").unwrap();
        let z = topo.site_by_label("1").unwrap();
        let xi = make_sector_configuration(&topo, &[(y, 1)], 0).unwrap();
        assert_eq!(xi.ones(), topo.sector(y).unwrap());
        let xi = make_sector_configuration(&topo, &[(y, 1), (z, 2)], 0).unwrap();
        assert_eq!(xi.twos(), topo.sector(z).unwrap());
        let xi = make_sector_configuration(&topo, &[], 2).unwrap();
        assert_eq!(xi.twos().len(), topo.site_count());
        let deeper = topo.site_by_label("0.1").unwrap();
        assert!(make_sector_configuration(&topo, &[(y, 1), (deeper, 2)], 0).is_err());
        assert!(make_sector_configuration(&topo, &[(y, 1), (y, 2)], 0).is_err());
        assert!(make_sector_configuration(&Topology::torus(1, 5).unwrap(), &[], 0).is_err());
    }

    #[test]
    fn zero_rate_dies() {
        let topo = Topology::torus(1, 20).unwrap();
        let est = estimate_survival(&topo, 0.0, &BTreeSet::from([0, 1]), 20.0, 1000, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        let rho = estimate_rho(&topo, 0.0, 3, 20.0, 30.0, 1000, 1).unwrap();
        assert_eq!(rho.successes, 0);
        let strong = estimate_strong_survival(&topo, 0.0, 3, 20.0, 30.0, 1000, 1).unwrap();
        assert_eq!(strong.estimate, 0.0);
        let stats = cluster_stats(&topo, 0.0, 3, 10.0, 200, 2).unwrap();
        assert!(stats.iter().all(|c| c.radius == 0));
        assert!(estimate_survival(&topo, 1.0, &BTreeSet::from([0]), 0.0, 1000, 1).is_err());
        assert!(estimate_rho(&topo, 1.0, 0, 5.0, 5.0, 1000, 1).is_err());
    }

    #[test]
    fn type_survival_edge_cases() {
        let topo = Topology::torus(1, 12).unwrap();
        let vacant = Configuration::vacant(12);
        let est = estimate_type_survival(&topo, 1.0, 2.0, &vacant, 5.0, 200, 3).unwrap();
        assert_eq!((est.alpha1.estimate, est.alpha2.estimate), (0.0, 0.0));
        let twos = Configuration::filled(12, 2).unwrap();
        let est = estimate_type_survival(&topo, 1.0, 2.0, &twos, 5.0, 200, 3).unwrap();
        assert_eq!(est.alpha1.estimate, 0.0);
        assert!(est.alpha1.estimate + est.alpha2.estimate <= 1.0);
    }

    #[test]
    fn critical_rejects_bad_bracket() {
        let topo = Topology::torus(1, 30).unwrap();
        let probe = ProbeParams { site: 0, t_max: 5.0, t_probe: 2.0, replicas: 200, seed: 1 };
        assert!(matches!(
            estimate_critical(&topo, SurvivalKind::Weak, (3.0, 4.0), 0.02, 3, &probe),
            Err(Error::BadBracket(_))
        ));
    }

    #[test]
    fn epsilon_is_nonincreasing() {
        let topo = Topology::torus(1, 40).unwrap();
        let stats = cluster_stats(&topo, 1.2, 0, 30.0, 500, 4).unwrap();
        let eps: Vec<f64> = (0..20).map(|m| epsilon_m(&stats, m)).collect();
        assert!(eps.windows(2).all(|w| w[1] <= w[0]));
        assert!(stats.iter().all(|c| c.radius <= 20 && c.lifetime <= 30.0));
    }

    #[test]
    fn replicate_is_ordered() {
        let a = replicate(50, 9, |s| s);
        let b: Vec<u64> = (0..50).map(|i| replica_seed(9, i)).collect();
        assert_eq!(a, b);
    }
}
