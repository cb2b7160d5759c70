//! Batch runs driven by TOML configs: validation, the worker pool, and the
//! CSV / JSON / manifest outputs.
//!
//! A config names one experiment and carries the shared settings at top
//! level; experiment-specific settings live in a `[params]` table. Sites are
//! given either as integer ids or as topology labels (`"O"`, `"0.1"`,
//! `"(3,4)"`). See `docs/config.md` for the schema.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checks::{check_instance, random_instance};
use crate::error::Error;
use crate::estimators::{
    cluster_stats, cluster_table, compare_with_oracle, epsilon_m, estimate_critical, estimate_rho,
    estimate_strong_survival, estimate_survival, experiment_theorem1, experiment_theorem2, experiment_theorem3,
    experiment_theorem4, replicate, sample_upper_invariant, Check, MixtureParams, ProbeParams, SurvivalKind,
    Theorem1Params, Theorem2Params,
};
use crate::forward::Configuration;
use crate::report::{Cell, Table};
use crate::streams::derive_seed;
use crate::topology::{Site, Topology, TopologySpec};

pub const WORKERS_ENV: &str = "MTCP_WORKERS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    DualityCheck,
    OracleCompare,
    Survival,
    StrongSurvival,
    Critical,
    UpperInvariant,
    Theorem1,
    Theorem2,
    Theorem3,
    Theorem4,
    ClusterStats,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::DualityCheck => "duality-check",
            Experiment::OracleCompare => "oracle-compare",
            Experiment::Survival => "survival",
            Experiment::StrongSurvival => "strong-survival",
            Experiment::Critical => "critical",
            Experiment::UpperInvariant => "upper-invariant",
            Experiment::Theorem1 => "theorem1",
            Experiment::Theorem2 => "theorem2",
            Experiment::Theorem3 => "theorem3",
            Experiment::Theorem4 => "theorem4",
            Experiment::ClusterStats => "cluster-stats",
        }
    }
}

/// A site given by id or by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SiteRef {
    Id(usize),
    Label(String),
}

impl SiteRef {
    pub fn resolve(&self, topo: &Topology) -> Result<Site, RunError> {
        match self {
            SiteRef::Id(x) => topo.check_site(*x).map(|_| *x).map_err(config_err),
            SiteRef::Label(l) => topo.site_by_label(l).ok_or_else(|| config_err(format!("no site labeled {l:?}"))),
        }
    }
}

fn resolve_all(refs: &[SiteRef], topo: &Topology) -> Result<Vec<Site>, RunError> {
    refs.iter().map(|r| r.resolve(topo)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub root: SiteRef,
    pub state: u8,
}

/// Initial configuration: a base (`states` string or constant `default`),
/// then sectors, then inclusive id ranges, then individual sites.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub default: u8,
    #[serde(default)]
    pub states: Option<String>,
    #[serde(default)]
    pub sectors: Vec<SectorSpec>,
    #[serde(default)]
    pub one_ranges: Vec<[usize; 2]>,
    #[serde(default)]
    pub two_ranges: Vec<[usize; 2]>,
    #[serde(default)]
    pub ones: Vec<SiteRef>,
    #[serde(default)]
    pub twos: Vec<SiteRef>,
    #[serde(default)]
    pub zeros: Vec<SiteRef>,
}

impl InitialSpec {
    pub fn build(&self, topo: &Topology) -> Result<Configuration, RunError> {
        let n = topo.site_count();
        let mut xi = match &self.states {
            Some(s) => s.parse::<Configuration>().map_err(config_err)?,
            None => Configuration::filled(n, self.default).map_err(config_err)?,
        };
        xi.check_size(topo).map_err(config_err)?;
        if !self.sectors.is_empty() {
            let roots = self
                .sectors
                .iter()
                .map(|s| Ok((s.root.resolve(topo)?, s.state)))
                .collect::<Result<Vec<_>, RunError>>()?;
            let sectored = crate::estimators::make_sector_configuration(topo, &roots, 0).map_err(config_err)?;
            for &(y, _) in &roots {
                for x in topo.sector(y).map_err(config_err)? {
                    xi.set(x, sectored.get(x)).map_err(config_err)?;
                }
            }
        }
        for (ranges, state) in [(&self.one_ranges, 1), (&self.two_ranges, 2)] {
            for &[a, b] in ranges.iter() {
                if a > b || b >= n {
                    return Err(config_err(format!("site range [{a}, {b}] invalid for {n} sites")));
                }
                for x in a..=b {
                    xi.set(x, state).map_err(config_err)?;
                }
            }
        }
        for (refs, state) in [(&self.ones, 1), (&self.twos, 2), (&self.zeros, 0)] {
            for x in resolve_all(refs, topo)? {
                xi.set(x, state).map_err(config_err)?;
            }
        }
        Ok(xi)
    }
}

fn default_replicas() -> u64 {
    10_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A complete run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub topology: Option<TopologySpec>,
    #[serde(default)]
    pub lambda1: Option<f64>,
    #[serde(default)]
    pub lambda2: Option<f64>,
    /// Default truncation horizon T_max.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub params: toml::Table,
}

/// Parses TOML text, applying `key=value` overrides (dotted keys reach into
/// tables; values are parsed as TOML, falling back to bare strings).
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig, RunError> {
    let mut doc: toml::Table = text.parse().map_err(config_err)?;
    for item in overrides {
        let (key, raw) =
            item.split_once('=').ok_or_else(|| config_err(format!("override {item:?} is not key=value")))?;
        let value = parse_value(raw.trim());
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields at least one item");
        let mut table = &mut doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| config_err(format!("override {key:?}: {p:?} is not a table")))?;
        }
        table.insert(last.to_string(), value);
    }
    toml::Value::Table(doc).try_into().map_err(config_err)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Loads a config file, or the config recorded in a run manifest (`.json`).
pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunConfig, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    if path.extension().is_some_and(|e| e == "json") {
        let manifest: RunManifest = serde_json::from_str(&text).map_err(config_err)?;
        return parse_config(&manifest.config_toml, overrides);
    }
    parse_config(&text, overrides)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to audit and reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub config: RunConfig,
    pub config_toml: String,
    pub workers: usize,
    pub outputs: Vec<OutputFile>,
    pub wall_time_seconds: f64,
    pub verdicts: Vec<Check>,
    pub passed: bool,
}

/// Worker count: `MTCP_WORKERS`, then the config, then all cores.
pub fn resolve_workers(config: &RunConfig) -> Result<usize, RunError> {
    let from_env = match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            Some(v.trim().parse::<usize>().map_err(|_| config_err(format!("{WORKERS_ENV}={v:?} is not a count")))?)
        }
        Err(_) => None,
    };
    let n = from_env.or(config.workers).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(config_err("worker count must be positive"));
    }
    Ok(n)
}

// ---------------------------------------------------------------------------
// Per-experiment parameters
// ---------------------------------------------------------------------------

fn take_params<T: DeserializeOwned>(config: &RunConfig) -> Result<T, RunError> {
    toml::Value::Table(config.params.clone())
        .try_into()
        .map_err(|e| config_err(format!("[params] for {}: {e}", config.experiment.name())))
}

fn default_horizon() -> f64 {
    50.0
}

fn default_sigmas3() -> f64 {
    3.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DualityParams {
    #[serde(default)]
    instances: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleParams {
    #[serde(default = "oracle_times")]
    times: Vec<f64>,
    #[serde(default = "oracle_sigmas")]
    sigmas: f64,
    #[serde(default = "oracle_fraction")]
    min_fraction: f64,
    #[serde(default = "oracle_tv")]
    max_tv: f64,
}

fn oracle_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}
fn oracle_sigmas() -> f64 {
    4.0
}
fn oracle_fraction() -> f64 {
    0.95
}
fn oracle_tv() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurvivalParams {
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    sites: Vec<SiteRef>,
    #[serde(default)]
    rho_t: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StrongParams {
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    site: Option<SiteRef>,
    #[serde(default)]
    t_probe: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CriticalParams {
    kind: SurvivalKind,
    bracket: [f64; 2],
    #[serde(default = "critical_threshold")]
    threshold: f64,
    #[serde(default = "critical_steps")]
    steps: usize,
    #[serde(default)]
    site: Option<SiteRef>,
    #[serde(default)]
    t_probe: Option<f64>,
}

fn critical_threshold() -> f64 {
    0.02
}
fn critical_steps() -> usize {
    6
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UpperParams {
    #[serde(default)]
    lambda: Option<f64>,
    t_relax: f64,
    sites: Vec<SiteRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClusterParams {
    #[serde(default)]
    lambda: Option<f64>,
    #[serde(default)]
    site: Option<SiteRef>,
    #[serde(default)]
    max_radius: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Theorem1Cfg {
    y: SiteRef,
    #[serde(default)]
    x_list: Option<Vec<SiteRef>>,
    #[serde(default = "t1_min_depth")]
    min_depth: usize,
    #[serde(default = "t1_grid")]
    t_grid: Vec<f64>,
    #[serde(default = "t1_default_state")]
    default_state: u8,
    #[serde(default)]
    alpha_t_max: Option<f64>,
    #[serde(default = "default_sigmas3")]
    sigmas: f64,
}

fn t1_min_depth() -> usize {
    4
}
fn t1_grid() -> Vec<f64> {
    vec![10.0, 20.0, 40.0]
}
fn t1_default_state() -> u8 {
    2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Theorem2Cfg {
    x: SiteRef,
    #[serde(default = "t2_grid")]
    t_grid: Vec<f64>,
    #[serde(default = "t2_l_grid")]
    l_grid: Vec<usize>,
    #[serde(default = "t2_epsilon")]
    epsilon: f64,
    #[serde(default = "default_sigmas3")]
    sigmas: f64,
}

fn t2_grid() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 40.0]
}
fn t2_l_grid() -> Vec<usize> {
    vec![5]
}
fn t2_epsilon() -> f64 {
    0.02
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureCfg {
    a: Vec<SiteRef>,
    #[serde(default = "mixture_t_eval")]
    t_eval: f64,
    #[serde(default = "default_sigmas3")]
    sigmas: f64,
    #[serde(default = "mixture_allowance")]
    allowance: f64,
}

fn mixture_t_eval() -> f64 {
    40.0
}
fn mixture_allowance() -> f64 {
    0.02
}

/// Everything resolved from a config before any compute starts.
struct Prepared {
    topology: Option<Topology>,
    initial: Option<Configuration>,
    job: Job,
}

enum Job {
    Duality { instances: u64 },
    Oracle { l1: f64, l2: f64, p: OracleParams },
    Survival { lambda: f64, sites: Vec<Site>, rho_t: Option<f64>, t_max: f64 },
    Strong { lambda: f64, site: Site, t_probe: f64, t_max: f64 },
    Critical { p: CriticalParams, probe: ProbeParams },
    Upper { lambda: f64, t_relax: f64, sites: Vec<Site> },
    Cluster { lambda: f64, site: Site, t_max: f64, max_radius: usize },
    Theorem1(Theorem1Params),
    Theorem2(Theorem2Params),
    Theorem3(MixtureParams),
    Theorem4(MixtureParams),
}

fn need<T: Copy>(v: Option<T>, what: &str, exp: Experiment) -> Result<T, RunError> {
    v.ok_or_else(|| config_err(format!("{} needs `{what}`", exp.name())))
}

fn check_rate(v: f64, what: &str) -> Result<f64, RunError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(config_err(format!("{what} must be finite and nonnegative, got {v}")));
    }
    Ok(v)
}

fn prepare(config: &RunConfig) -> Result<Prepared, RunError> {
    let exp = config.experiment;
    if let (Some(l1), Some(l2)) = (config.lambda1, config.lambda2) {
        check_rate(l1, "lambda1")?;
        check_rate(l2, "lambda2")?;
        if l1 > l2 {
            return Err(config_err(format!(
                "lambda1 = {l1} exceeds lambda2 = {l2}; label the types so that lambda1 <= lambda2"
            )));
        }
    }
    if config.replicas == 0 {
        return Err(config_err("replicas must be positive"));
    }
    let t_max = config.horizon.unwrap_or_else(default_horizon);
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(config_err(format!("horizon must be positive, got {t_max}")));
    }
    let topology = match config.topology {
        Some(spec) => Some(spec.build().map_err(config_err)?),
        None if exp == Experiment::DualityCheck => None,
        None => return Err(config_err(format!("{} needs a [topology] table", exp.name()))),
    };
    let initial = match (&config.initial, &topology) {
        (Some(spec), Some(topo)) => Some(spec.build(topo)?),
        _ => None,
    };
    let needs_initial =
        matches!(exp, Experiment::OracleCompare | Experiment::Theorem2 | Experiment::Theorem3 | Experiment::Theorem4);
    if needs_initial && initial.is_none() {
        return Err(config_err(format!("{} needs an [initial] table", exp.name())));
    }
    let replicas = config.replicas;
    let seed = config.seed;
    let root_or_zero = |topo: &Topology| topo.root().unwrap_or(0);
    let lambda_or = |v: Option<f64>| -> Result<f64, RunError> {
        check_rate(
            v.or(config.lambda2).ok_or_else(|| config_err(format!("{} needs `lambda` or `lambda2`", exp.name())))?,
            "lambda",
        )
    };
    let job = match exp {
        Experiment::DualityCheck => {
            let p: DualityParams = take_params(config)?;
            Job::Duality { instances: p.instances.unwrap_or(replicas) }
        }
        Experiment::OracleCompare => {
            let p: OracleParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            if topo.site_count() > crate::oracle::DEFAULT_SITE_LIMIT {
                return Err(config_err(format!("oracle needs at most {} sites", crate::oracle::DEFAULT_SITE_LIMIT)));
            }
            let l1 = need(config.lambda1, "lambda1", exp)?;
            let l2 = need(config.lambda2, "lambda2", exp)?;
            if l1 <= 0.0 {
                return Err(config_err("oracle-compare needs positive rates"));
            }
            if p.times.is_empty() || p.times.windows(2).any(|w| w[0] >= w[1]) || p.times[0] <= 0.0 {
                return Err(config_err("times must be positive and increasing"));
            }
            Job::Oracle { l1, l2, p }
        }
        Experiment::Survival => {
            let p: SurvivalParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let mut sites = resolve_all(&p.sites, topo)?;
            if sites.is_empty() {
                sites.push(root_or_zero(topo));
            }
            if let Some(t) = p.rho_t {
                if !(t >= 0.0 && t < t_max) {
                    return Err(config_err("rho_t must lie in [0, horizon)"));
                }
            }
            Job::Survival { lambda: lambda_or(p.lambda)?, sites, rho_t: p.rho_t, t_max }
        }
        Experiment::StrongSurvival => {
            let p: StrongParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let site = p.site.map(|s| s.resolve(topo)).transpose()?.unwrap_or_else(|| root_or_zero(topo));
            let t_probe = p.t_probe.unwrap_or(t_max / 2.0);
            if !(t_probe >= 0.0 && t_probe < t_max) {
                return Err(config_err("t_probe must lie in [0, horizon)"));
            }
            Job::Strong { lambda: lambda_or(p.lambda)?, site, t_probe, t_max }
        }
        Experiment::Critical => {
            let p: CriticalParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let site = p.site.clone().map(|s| s.resolve(topo)).transpose()?.unwrap_or_else(|| root_or_zero(topo));
            let t_probe = p.t_probe.unwrap_or(t_max / 2.0);
            if p.kind == SurvivalKind::Strong && !(t_probe >= 0.0 && t_probe < t_max) {
                return Err(config_err("t_probe must lie in [0, horizon)"));
            }
            if !(p.bracket[0] >= 0.0 && p.bracket[0] < p.bracket[1]) {
                return Err(config_err("bracket must be [low, high] with 0 <= low < high"));
            }
            let probe = ProbeParams { site, t_max, t_probe, replicas, seed };
            Job::Critical { p, probe }
        }
        Experiment::UpperInvariant => {
            let p: UpperParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let sites = resolve_all(&p.sites, topo)?;
            if sites.is_empty() || sites.len() > 16 {
                return Err(config_err("upper-invariant needs between 1 and 16 sites"));
            }
            Job::Upper { lambda: lambda_or(p.lambda)?, t_relax: p.t_relax, sites }
        }
        Experiment::ClusterStats => {
            let p: ClusterParams = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let site = p.site.map(|s| s.resolve(topo)).transpose()?.unwrap_or_else(|| root_or_zero(topo));
            let max_radius = p.max_radius.unwrap_or_else(|| topo.distances_from(site).into_iter().max().unwrap_or(0));
            Job::Cluster { lambda: lambda_or(p.lambda)?, site, t_max, max_radius }
        }
        Experiment::Theorem1 => {
            let p: Theorem1Cfg = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let y = p.y.resolve(topo)?;
            let x_list = match &p.x_list {
                Some(list) => resolve_all(list, topo)?,
                None => topo.leftmost_descent(y).into_iter().filter(|&x| topo.depth(x) >= p.min_depth).collect(),
            };
            if x_list.is_empty() {
                return Err(config_err("theorem1 needs at least one site x"));
            }
            Job::Theorem1(Theorem1Params {
                lambda1: need(config.lambda1, "lambda1", exp)?,
                lambda2: need(config.lambda2, "lambda2", exp)?,
                y,
                x_list,
                t_grid: p.t_grid,
                default_state: p.default_state,
                alpha_t_max: p.alpha_t_max.unwrap_or(t_max),
                replicas,
                seed,
                sigmas: p.sigmas,
            })
        }
        Experiment::Theorem2 => {
            let p: Theorem2Cfg = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            Job::Theorem2(Theorem2Params {
                lambda1: need(config.lambda1, "lambda1", exp)?,
                lambda2: need(config.lambda2, "lambda2", exp)?,
                x: p.x.resolve(topo)?,
                t_grid: p.t_grid,
                l_grid: p.l_grid,
                epsilon: p.epsilon,
                replicas,
                seed,
                sigmas: p.sigmas,
            })
        }
        Experiment::Theorem3 | Experiment::Theorem4 => {
            let p: MixtureCfg = take_params(config)?;
            let topo = topology.as_ref().expect("checked above");
            let a = resolve_all(&p.a, topo)?;
            if a.is_empty() {
                return Err(config_err("the observation set `a` is empty"));
            }
            let mp = MixtureParams {
                lambda1: need(config.lambda1, "lambda1", exp)?,
                lambda2: need(config.lambda2, "lambda2", exp)?,
                a,
                t_eval: p.t_eval,
                t_max,
                replicas,
                seed,
                sigmas: p.sigmas,
                allowance: p.allowance,
            };
            if exp == Experiment::Theorem3 {
                Job::Theorem3(mp)
            } else {
                Job::Theorem4(mp)
            }
        }
    };
    if matches!(job, Job::Survival { .. } | Job::Strong { .. } | Job::Critical { .. }) && replicas < 100 {
        return Err(config_err("survival estimators need at least 100 replicas"));
    }
    Ok(Prepared { topology, initial, job })
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

/// Result of one experiment before it is written out.
pub struct Outcome {
    pub table: Table,
    pub summary: serde_json::Value,
    pub checks: Vec<Check>,
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn execute(config: &RunConfig, prep: &Prepared) -> Result<Outcome, RunError> {
    let topo = prep.topology.as_ref();
    let seed = config.seed;
    let replicas = config.replicas;
    let out = match &prep.job {
        Job::Duality { instances } => {
            let results = replicate(*instances, derive_seed(seed, "duality"), |s| {
                let inst = random_instance(s)?;
                let out = check_instance(&inst)?;
                Ok::<_, Error>((inst, out))
            });
            let mut table = Table::new(&[
                "instance", "seed", "topology", "lambda1", "lambda2", "x", "t", "jumps", "duality", "support", "marks",
                "coupling",
            ]);
            let mut failed = 0usize;
            for (i, r) in results.into_iter().enumerate() {
                let (inst, o) = r?;
                failed += usize::from(!o.all_pass());
                table.push(vec![
                    i.into(),
                    inst.seed.into(),
                    inst.topology.spec().to_string().into(),
                    inst.log.lambda1().into(),
                    inst.log.lambda2().into(),
                    inst.x.into(),
                    inst.t.into(),
                    o.jumps.into(),
                    o.duality.into(),
                    o.support.into(),
                    o.marks.into(),
                    o.coupling.into(),
                ]);
            }
            let checks = vec![Check {
                name: "pathwise".into(),
                passed: failed == 0,
                detail: format!("{failed} of {instances} instances failed"),
            }];
            Outcome { table, summary: serde_json::json!({ "instances": instances, "failed": failed }), checks }
        }
        Job::Oracle { l1, l2, p } => {
            let topo = topo.expect("prepared");
            let xi0 = prep.initial.as_ref().expect("prepared");
            let cmp = compare_with_oracle(topo, *l1, *l2, xi0, &p.times, replicas, seed, p.sigmas)?;
            let frac = cmp.fraction_within();
            let tv = cmp.max_tv();
            let checks = vec![
                Check {
                    name: "cells-within".into(),
                    passed: frac >= p.min_fraction,
                    detail: format!("{:.4} of {} cells within {} SE", frac, cmp.cells.len(), p.sigmas),
                },
                Check { name: "joint-tv".into(), passed: tv <= p.max_tv, detail: format!("max TV {tv:.5}") },
            ];
            Outcome {
                table: cmp.table(),
                summary: serde_json::json!({ "fraction_within": frac, "joint_tv": cmp.joint_tv, "initial": xi0.to_string() }),
                checks,
            }
        }
        Job::Survival { lambda, sites, rho_t, t_max } => {
            let topo = topo.expect("prepared");
            let a0: BTreeSet<Site> = sites.iter().copied().collect();
            let est = estimate_survival(topo, *lambda, &a0, *t_max, replicas, seed)?;
            let rho = match rho_t {
                Some(t) if a0.len() == 1 => {
                    Some(estimate_rho(topo, *lambda, sites[0], *t, *t_max, replicas, derive_seed(seed, "rho"))?)
                }
                _ => None,
            };
            let mut table =
                Table::new(&["lambda", "t_max", "estimate", "ci_low", "ci_high", "rho_half", "rho_t", "rho"]);
            table.push(vec![
                (*lambda).into(),
                (*t_max).into(),
                est.estimate.into(),
                est.ci_low.into(),
                est.ci_high.into(),
                est.rho_diagnostic.into(),
                Cell::from(*rho_t),
                rho.map(|r| r.estimate).into(),
            ]);
            let ok = est.ci_low <= est.estimate && est.estimate <= est.ci_high;
            Outcome {
                table,
                summary: serde_json::json!({ "estimate": est, "rho": rho }),
                checks: vec![Check {
                    name: "interval".into(),
                    passed: ok,
                    detail: "Wilson interval contains the estimate".into(),
                }],
            }
        }
        Job::Strong { lambda, site, t_probe, t_max } => {
            let topo = topo.expect("prepared");
            let strong = estimate_strong_survival(topo, *lambda, *site, *t_probe, *t_max, replicas, seed)?;
            let global = estimate_survival(
                topo,
                *lambda,
                &BTreeSet::from([*site]),
                *t_max,
                replicas,
                derive_seed(seed, "global"),
            )?;
            let mut table = Table::new(&[
                "lambda",
                "t_probe",
                "t_max",
                "strong",
                "strong_ci_low",
                "strong_ci_high",
                "global",
                "global_ci_low",
                "global_ci_high",
            ]);
            table.push(vec![
                (*lambda).into(),
                (*t_probe).into(),
                (*t_max).into(),
                strong.estimate.into(),
                strong.ci_low.into(),
                strong.ci_high.into(),
                global.estimate.into(),
                global.ci_low.into(),
                global.ci_high.into(),
            ]);
            let ok = strong.ci_low <= global.ci_high;
            Outcome {
                table,
                summary: serde_json::json!({ "strong": strong, "global": global }),
                checks: vec![Check {
                    name: "strong-below-global".into(),
                    passed: ok,
                    detail: format!("strong {:.4}, global {:.4}", strong.estimate, global.estimate),
                }],
            }
        }
        Job::Critical { p, probe } => {
            let topo = topo.expect("prepared");
            let est = estimate_critical(topo, p.kind, (p.bracket[0], p.bracket[1]), p.threshold, p.steps, probe)?;
            Outcome {
                table: est.table(),
                summary: json(&est),
                checks: vec![Check {
                    name: "bracket".into(),
                    passed: true,
                    detail: format!("[{:.5}, {:.5}]", est.lambda_low, est.lambda_high),
                }],
            }
        }
        Job::Upper { lambda, t_relax, sites } => {
            let topo = topo.expect("prepared");
            let occ = sample_upper_invariant(topo, *lambda, *t_relax, sites, replicas, seed)?;
            // Miss probability over growing prefixes of the site list.
            let misses: Vec<f64> = (1..=sites.len())
                .map(|k| {
                    let mask = (1usize << k) - 1;
                    occ.counts.iter().enumerate().filter(|(p, _)| p & mask == 0).map(|(_, &c)| c).sum::<u64>() as f64
                        / replicas as f64
                })
                .collect();
            let ok = misses.windows(2).all(|w| w[1] <= w[0]);
            Outcome {
                table: occ.table(),
                summary: serde_json::json!({ "occupancy": occ, "nested_miss": misses }),
                checks: vec![Check { name: "nested-miss".into(), passed: ok, detail: format!("{misses:?}") }],
            }
        }
        Job::Cluster { lambda, site, t_max, max_radius } => {
            let topo = topo.expect("prepared");
            let stats = cluster_stats(topo, *lambda, *site, *t_max, replicas, seed)?;
            let eps: Vec<f64> = (0..=*max_radius).map(|m| epsilon_m(&stats, m)).collect();
            let ok = eps.windows(2).all(|w| w[1] <= w[0]);
            Outcome {
                table: cluster_table(&stats, *max_radius),
                summary: serde_json::json!({ "epsilon": eps, "died_out": stats.iter().filter(|c| !c.censored).count() }),
                checks: vec![Check {
                    name: "epsilon-monotone".into(),
                    passed: ok,
                    detail: format!("{} radii", eps.len()),
                }],
            }
        }
        Job::Theorem1(p) => {
            let r = experiment_theorem1(topo.expect("prepared"), p)?;
            Outcome { table: r.table(), checks: r.checks(), summary: json(&r) }
        }
        Job::Theorem2(p) => {
            let r = experiment_theorem2(topo.expect("prepared"), prep.initial.as_ref().expect("prepared"), p)?;
            Outcome { table: r.table(), checks: r.checks(), summary: json(&r) }
        }
        Job::Theorem3(p) => {
            let r = experiment_theorem3(topo.expect("prepared"), prep.initial.as_ref().expect("prepared"), p)?;
            Outcome { table: r.table(), checks: r.checks(), summary: json(&r) }
        }
        Job::Theorem4(p) => {
            let r = experiment_theorem4(topo.expect("prepared"), prep.initial.as_ref().expect("prepared"), p)?;
            Outcome { table: r.table(), checks: r.checks(), summary: json(&r) }
        }
    };
    Ok(out)
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<OutputFile, RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))?;
    Ok(OutputFile { path: name.to_string(), sha256: hex::encode(Sha256::digest(contents)) })
}

/// Checks every parameter of `config` without running anything.
pub fn validate(config: &RunConfig) -> Result<(), RunError> {
    prepare(config).map(|_| ())
}

/// Validates, runs and writes outputs. Invalid configs fail before anything
/// is written.
pub fn run(config: &RunConfig) -> Result<RunManifest, RunError> {
    let started = Instant::now();
    let prep = prepare(config)?;
    let workers = resolve_workers(config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Compute(Error::InvalidArgument(e.to_string())))?;
    let outcome = pool.install(|| execute(config, &prep))?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = config.experiment.name();
    let passed = outcome.checks.iter().all(|c| c.passed);
    let config_toml = toml::to_string(config).map_err(|e| RunError::Config(e.to_string()))?;
    let summary = serde_json::json!({
        "experiment": name,
        "seed": config.seed,
        "replicas": config.replicas,
        "topology": config.topology,
        "lambda1": config.lambda1,
        "lambda2": config.lambda2,
        "result": outcome.summary,
        "checks": outcome.checks,
        "passed": passed,
    });
    let outputs = vec![
        write_file(dir, &format!("{name}.csv"), outcome.table.to_csv().as_bytes())?,
        write_file(
            dir,
            &format!("{name}.json"),
            serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
        )?,
    ];
    let manifest = RunManifest {
        tool: "mtcp".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        experiment: name.into(),
        config: config.clone(),
        config_toml,
        workers,
        outputs,
        wall_time_seconds: started.elapsed().as_secs_f64(),
        verdicts: outcome.checks,
        passed,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).map_err(io_err(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
experiment = "survival"
seed = 7
replicas = 200
lambda2 = 1.5

[topology]
kind = "torus"
d = 1
extent = 30
"#;

    #[test]
    fn overrides_reach_nested_keys() {
        let c =
            parse_config(BASE, &["topology.extent=40".into(), "params.sites=[0, 1]".into(), "seed=9".into()]).unwrap();
        assert_eq!(c.topology.unwrap().extent, 40);
        assert_eq!(c.seed, 9);
        assert_eq!(c.params["sites"], toml::Value::Array(vec![0.into(), 1.into()]));
    }

    #[test]
    fn inverted_rates_are_config_errors() {
        let c = parse_config(BASE, &["lambda1=2.0".into()]).unwrap();
        let err = run(&c).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config(BASE, &["colour=\"red\"".into()]).is_err());
        let c = parse_config(BASE, &["params.bogus=1".into()]).unwrap();
        assert!(matches!(prepare(&c), Err(RunError::Config(_))));
    }

    #[test]
    fn initial_spec_layers() {
        let topo = Topology::torus(1, 10).unwrap();
        let spec = InitialSpec {
            default: 1,
            two_ranges: vec![[2, 4]],
            zeros: vec![SiteRef::Label("(9)".into())],
            ..Default::default()
        };
        assert_eq!(spec.build(&topo).unwrap().to_string(), "1122211110");
        let bad = InitialSpec { two_ranges: vec![[5, 12]], ..Default::default() };
        assert!(bad.build(&topo).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = parse_config(BASE, &[]).unwrap();
        let again = parse_config(&toml::to_string(&c).unwrap(), &[]).unwrap();
        assert_eq!(c, again);
    }
}
