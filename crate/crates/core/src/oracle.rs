//! Exact transient laws on tiny graphs: the process as a finite Markov chain
//! on {0,1,2}^N, solved by uniformization.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::forward::Configuration;
use crate::report::float;
use crate::topology::{Site, Topology};

pub const DEFAULT_SITE_LIMIT: usize = 8;
const TAIL: f64 = 1e-12;
// Largest Poisson mean per uniformization chunk.
const CHUNK_MEAN: f64 = 20.0;

/// Sparse generator of the chain. States are base-3 integers with site 0 as
/// the least significant digit.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    site_count: usize,
    lambda1: f64,
    lambda2: f64,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    rates: Vec<f64>,
    outflow: Vec<f64>,
}

pub fn encode(xi: &Configuration) -> usize {
    xi.states().iter().rev().fold(0, |acc, &s| acc * 3 + s as usize)
}

pub fn decode(mut index: usize, site_count: usize) -> Configuration {
    let states = (0..site_count)
        .map(|_| {
            let s = (index % 3) as u8;
            index /= 3;
            s
        })
        .collect();
    Configuration::from_states(states).expect("digits are valid states")
}

pub fn build_generator(topo: &Topology, lambda1: f64, lambda2: f64) -> Result<GeneratorMatrix> {
    build_generator_with_limit(topo, lambda1, lambda2, DEFAULT_SITE_LIMIT)
}

/// Rates: i -> 0 at rate 1; 0 -> i at rate lambda_i times the number of
/// type-i neighbors.
pub fn build_generator_with_limit(
    topo: &Topology,
    lambda1: f64,
    lambda2: f64,
    limit: usize,
) -> Result<GeneratorMatrix> {
    let n = topo.site_count();
    if n > limit {
        return Err(Error::StateSpaceTooLarge { sites: n, limit });
    }
    if !(lambda1.is_finite() && lambda2.is_finite() && lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(Error::InvalidRates(format!("rates must be finite and nonnegative, got {lambda1}, {lambda2}")));
    }
    let size = 3usize.pow(n as u32);
    let pow3: Vec<usize> = (0..n).map(|i| 3usize.pow(i as u32)).collect();
    let mut offsets = Vec::with_capacity(size + 1);
    let mut targets = Vec::new();
    let mut rates = Vec::new();
    let mut outflow = Vec::with_capacity(size);
    offsets.push(0);
    let mut digits = vec![0u8; n];
    for state in 0..size {
        let mut rest = state;
        for d in digits.iter_mut() {
            *d = (rest % 3) as u8;
            rest /= 3;
        }
        let mut total = 0.0;
        for x in 0..n {
            let s = digits[x];
            if s != 0 {
                targets.push((state - s as usize * pow3[x]) as u32);
                rates.push(1.0);
                total += 1.0;
                continue;
            }
            let (mut n1, mut n2) = (0usize, 0usize);
            for &y in topo.neighbors(x) {
                match digits[y] {
                    1 => n1 += 1,
                    2 => n2 += 1,
                    _ => {}
                }
            }
            for (count, lambda, ty) in [(n1, lambda1, 1usize), (n2, lambda2, 2usize)] {
                let r = lambda * count as f64;
                if r > 0.0 {
                    targets.push((state + ty * pow3[x]) as u32);
                    rates.push(r);
                    total += r;
                }
            }
        }
        outflow.push(total);
        offsets.push(targets.len());
    }
    Ok(GeneratorMatrix { site_count: n, lambda1, lambda2, offsets, targets, rates, outflow })
}

impl GeneratorMatrix {
    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn state_count(&self) -> usize {
        self.outflow.len()
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.lambda1, self.lambda2)
    }

    /// Off-diagonal entries `(target, rate)` of one row.
    pub fn row(&self, state: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[state]..self.offsets[state + 1];
        self.targets[r.clone()].iter().zip(&self.rates[r]).map(|(&j, &q)| (j as usize, q))
    }

    pub fn diagonal(&self, state: usize) -> f64 {
        -self.outflow[state]
    }

    pub fn row_sum(&self, state: usize) -> f64 {
        self.row(state).map(|(_, q)| q).sum::<f64>() + self.diagonal(state)
    }

    pub fn max_outflow(&self) -> f64 {
        self.outflow.iter().copied().fold(0.0, f64::max)
    }
}

/// Law of the configuration at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub t: f64,
    site_count: usize,
    probs: Vec<f64>,
}

impl ExactDistribution {
    pub fn point_mass(xi: &Configuration) -> Self {
        let mut probs = vec![0.0; 3usize.pow(xi.len() as u32)];
        probs[encode(xi)] = 1.0;
        Self { t: 0.0, site_count: xi.len(), probs }
    }

    /// Wraps a probability vector indexed by the base-3 state encoding.
    pub fn from_probabilities(t: f64, site_count: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != 3usize.pow(site_count as u32) {
            return Err(Error::InvalidArgument(format!("expected 3^{site_count} probabilities, got {}", probs.len())));
        }
        Ok(Self { t, site_count, probs })
    }

    pub fn site_count(&self) -> usize {
        self.site_count
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn probability(&self, xi: &Configuration) -> f64 {
        self.probs[encode(xi)]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn total_variation(&self, other: &Self) -> f64 {
        0.5 * self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

pub fn transient_distribution(gen: &GeneratorMatrix, xi0: &Configuration, t: f64) -> Result<ExactDistribution> {
    if xi0.len() != gen.site_count {
        return Err(Error::ConfigurationSize { got: xi0.len(), expected: gen.site_count });
    }
    evolve_distribution(gen, &ExactDistribution::point_mass(xi0), t)
}

/// Pushes a distribution forward by `t` time units.
pub fn evolve_distribution(gen: &GeneratorMatrix, start: &ExactDistribution, t: f64) -> Result<ExactDistribution> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidTime(format!("t must be finite and nonnegative, got {t}")));
    }
    if start.probs.len() != gen.state_count() {
        return Err(Error::ConfigurationSize { got: start.site_count, expected: gen.site_count });
    }
    let q = gen.max_outflow();
    let mut v = start.probs.clone();
    if q > 0.0 && t > 0.0 {
        let chunks = (q * t / CHUNK_MEAN).ceil().max(1.0) as usize;
        let dt = t / chunks as f64;
        for _ in 0..chunks {
            v = uniformize(gen, &v, q, q * dt);
        }
    }
    Ok(ExactDistribution { t: start.t + t, site_count: gen.site_count, probs: v })
}

fn uniformize(gen: &GeneratorMatrix, v0: &[f64], q: f64, mean: f64) -> Vec<f64> {
    let mut term = v0.to_vec();
    let mut next = vec![0.0; v0.len()];
    let mut weight = (-mean).exp();
    let mut covered = weight;
    let mut out: Vec<f64> = term.iter().map(|p| p * weight).collect();
    let mut k = 0usize;
    while 1.0 - covered > TAIL && k < 10_000 {
        k += 1;
        // next = term * (I + Q/q)
        for (j, slot) in next.iter_mut().enumerate() {
            *slot = term[j] * (1.0 - gen.outflow[j] / q);
        }
        for (i, &p) in term.iter().enumerate() {
            if p != 0.0 {
                for (j, r) in gen.row(i) {
                    next[j] += p * r / q;
                }
            }
        }
        std::mem::swap(&mut term, &mut next);
        weight *= mean / k as f64;
        covered += weight;
        for (o, p) in out.iter_mut().zip(&term) {
            *o += p * weight;
        }
    }
    // Put the truncated tail mass on the last computed term.
    let tail = (1.0 - covered).max(0.0);
    for (o, p) in out.iter_mut().zip(&term) {
        *o += p * tail;
    }
    out
}

/// Joint law of the states at a few sites. Index digits follow the order of
/// `sites`, first site least significant.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    pub sites: Vec<Site>,
    pub probs: Vec<f64>,
}

impl MarginalTable {
    pub fn pattern_index(pattern: &[u8]) -> usize {
        pattern.iter().rev().fold(0, |acc, &s| acc * 3 + s as usize)
    }

    pub fn pattern(&self, index: usize) -> Vec<u8> {
        let mut rest = index;
        (0..self.sites.len())
            .map(|_| {
                let s = (rest % 3) as u8;
                rest /= 3;
                s
            })
            .collect()
    }

    pub fn get(&self, pattern: &[u8]) -> f64 {
        self.probs[Self::pattern_index(pattern)]
    }

    /// CSV with columns `sites,pattern,probability`; sites are written
    /// space-separated and patterns as digit strings in site order.
    pub fn to_csv(&self) -> String {
        let sites = self.sites.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::from("sites,pattern,probability\n");
        for (i, p) in self.probs.iter().enumerate() {
            let pattern: String = self.pattern(i).iter().map(|d| char::from(b'0' + d)).collect();
            writeln!(out, "{sites},{pattern},{}", float(*p)).expect("writing to a string");
        }
        out
    }
}

pub fn marginal(dist: &ExactDistribution, sites: &[Site]) -> Result<MarginalTable> {
    for &s in sites {
        if s >= dist.site_count {
            return Err(Error::InvalidSite { site: s, site_count: dist.site_count });
        }
    }
    let mut probs = vec![0.0; 3usize.pow(sites.len() as u32)];
    for (state, &p) in dist.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut idx = 0;
        for &s in sites.iter().rev() {
            idx = idx * 3 + (state / 3usize.pow(s as u32)) % 3;
        }
        probs[idx] += p;
    }
    Ok(MarginalTable { sites: sites.to_vec(), probs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(s: &str) -> Configuration {
        s.parse().unwrap()
    }

    #[test]
    fn encoding_round_trips() {
        for i in 0..81 {
            assert_eq!(encode(&decode(i, 4)), i);
        }
        assert_eq!(encode(&config("21")), 2 + 3);
    }

    #[test]
    fn single_site_only_dies() {
        let topo = Topology::path(1).unwrap();
        let gen = build_generator(&topo, 1.0, 2.0).unwrap();
        assert_eq!(gen.row(1).collect::<Vec<_>>(), vec![(0, 1.0)]);
        assert_eq!(gen.row(2).collect::<Vec<_>>(), vec![(0, 1.0)]);
        assert_eq!(gen.row(0).count(), 0);
        let dist = transient_distribution(&gen, &config("1"), 1.3).unwrap();
        assert!((dist.probability(&config("1")) - (-1.3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn two_site_rows() {
        let topo = Topology::path(2).unwrap();
        let gen = build_generator(&topo, 0.7, 1.5).unwrap();
        let mut row: Vec<_> = gen.row(encode(&config("10"))).collect();
        row.sort_by_key(|a| a.0);
        assert_eq!(row, vec![(encode(&config("00")), 1.0), (encode(&config("11")), 0.7)]);
        assert_eq!(gen.diagonal(encode(&config("12"))), -2.0);
        for s in 0..gen.state_count() {
            assert!(gen.row_sum(s).abs() < 1e-12);
        }
    }

    #[test]
    fn size_limit() {
        let topo = Topology::path(9).unwrap();
        assert!(matches!(build_generator(&topo, 1.0, 1.0), Err(Error::StateSpaceTooLarge { .. })));
    }

    #[test]
    fn point_mass_at_zero_and_normalization() {
        let topo = Topology::path(3).unwrap();
        let gen = build_generator(&topo, 1.0, 2.0).unwrap();
        let xi0 = config("120");
        assert_eq!(transient_distribution(&gen, &xi0, 0.0).unwrap().probability(&xi0), 1.0);
        let dist = transient_distribution(&gen, &xi0, 35.0).unwrap();
        assert!((dist.total() - 1.0).abs() < 1e-10);
        assert!(dist.probabilities().iter().all(|&p| p >= -1e-15));
        assert!(transient_distribution(&gen, &xi0, -1.0).is_err());
    }

    #[test]
    fn semigroup() {
        let topo = Topology::tree_ball(3, 1).unwrap();
        let gen = build_generator(&topo, 1.2, 2.5).unwrap();
        let xi0 = config("21010");
        let half = transient_distribution(&gen, &xi0, 0.8).unwrap();
        let composed = evolve_distribution(&gen, &half, 1.7).unwrap();
        let direct = transient_distribution(&gen, &xi0, 2.5).unwrap();
        assert!(composed.total_variation(&direct) < 1e-9);
    }

    #[test]
    fn extinction_mass_grows() {
        let topo = Topology::path(3).unwrap();
        let gen = build_generator(&topo, 1.5, 2.0).unwrap();
        let xi0 = config("212");
        let zero = config("000");
        let mut last = 0.0;
        for t in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let p = transient_distribution(&gen, &xi0, t).unwrap().probability(&zero);
            assert!(p >= last - 1e-12);
            last = p;
        }
    }

    #[test]
    fn type_swap_symmetry() {
        let topo = Topology::path(3).unwrap();
        let swap = |xi: &Configuration| {
            Configuration::from_states(xi.states().iter().map(|&s| [0, 2, 1][s as usize]).collect()).unwrap()
        };
        let xi0 = config("102");
        let a = transient_distribution(&build_generator(&topo, 0.6, 1.9).unwrap(), &xi0, 1.4).unwrap();
        let b = transient_distribution(&build_generator(&topo, 1.9, 0.6).unwrap(), &swap(&xi0), 1.4).unwrap();
        for i in 0..27 {
            let xi = decode(i, 3);
            assert!((a.probability(&xi) - b.probability(&swap(&xi))).abs() < 1e-14);
        }
    }

    #[test]
    fn marginals_are_coherent() {
        let topo = Topology::path(3).unwrap();
        let gen = build_generator(&topo, 1.0, 1.0).unwrap();
        let dist = transient_distribution(&gen, &config("200"), 1.0).unwrap();
        let all = marginal(&dist, &[0, 1, 2]).unwrap();
        assert_eq!(all.probs, dist.probabilities());
        let pair = marginal(&dist, &[0, 2]).unwrap();
        let m0 = marginal(&dist, &[0]).unwrap();
        let m2 = marginal(&dist, &[2]).unwrap();
        assert!((m0.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for a in 0..3u8 {
            let from_pair: f64 = (0..3u8).map(|b| pair.get(&[a, b])).sum();
            assert!((from_pair - m0.get(&[a])).abs() < 1e-14);
            let from_pair: f64 = (0..3u8).map(|b| pair.get(&[b, a])).sum();
            assert!((from_pair - m2.get(&[a])).abs() < 1e-14);
        }
        let csv = pair.to_csv();
        assert!(csv.starts_with("sites,pattern,probability\n0 2,00,"));
        assert_eq!(csv.lines().count(), 10);
    }
}
