//! Ising model with `{0, 1}` spins embedded as a nested family through an auxiliary height.
//!
//! `-H(x)` is one plus the number of edges whose endpoints agree, so
//! `-H(x) >= 1` everywhere. Lifting `x` to `(x, y)` with
//! `y in [0, exp(-beta H(x))]` gives slabs whose total length is `Z(beta)`,
//! nested in `beta`. The shell is the user's inverse temperature and the
//! center is `beta = 0`, where `Z(0) = 2^#V`.

use std::collections::HashSet;
use std::f64::consts::LN_2;

use rand::distr::Open01;
use rand::Rng;

use crate::error::{invalid, Result, TpaError};
use crate::family::{Draw, NestedFamily};
use crate::stats::LogSumExp;

/// Largest vertex count handled by exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 24;

/// Undirected simple graph on vertices `0..vertex_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeGraph {
    vertex_count: usize,
    edges: Vec<(usize, usize)>,
}

impl LatticeGraph {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(u, v) in &edges {
            if u >= vertex_count || v >= vertex_count {
                return Err(invalid(format!("edge ({u}, {v}) references a missing vertex")));
            }
            if u == v {
                return Err(invalid(format!("self-loop at vertex {u}")));
            }
            if !seen.insert((u.min(v), u.max(v))) {
                return Err(invalid(format!("duplicate edge ({u}, {v})")));
            }
        }
        Ok(Self { vertex_count, edges })
    }

    /// `width x height` square lattice, row-major vertex numbering.
    ///
    /// With `wrap`, opposite sides are joined; a wrap edge that would repeat an
    /// existing edge (side length 2) or form a self-loop (side length 1) is skipped.
    pub fn lattice(width: usize, height: usize, wrap: bool) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid("lattice dimensions must be positive"));
        }
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        let mut add = |u: usize, v: usize, edges: &mut Vec<(usize, usize)>| {
            if u != v && seen.insert((u.min(v), u.max(v))) {
                edges.push((u, v));
            }
        };
        for y in 0..height {
            for x in 0..width {
                let v = y * width + x;
                if x + 1 < width {
                    add(v, v + 1, &mut edges);
                } else if wrap {
                    add(v, y * width, &mut edges);
                }
                if y + 1 < height {
                    add(v, v + width, &mut edges);
                } else if wrap {
                    add(v, x, &mut edges);
                }
            }
        }
        Self::new(width * height, edges)
    }

    /// Parses an edge list: one `u v` pair per line, `#` comments and blank lines ignored.
    ///
    /// The vertex count is `vertex_count` if given, otherwise one past the largest index.
    pub fn from_edge_list(text: &str, vertex_count: Option<usize>) -> Result<Self> {
        let mut edges = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| invalid(format!("line {}: bad vertex index {s:?}", lineno + 1)))
            };
            match fields.as_slice() {
                [u, v] => edges.push((parse(u)?, parse(v)?)),
                _ => {
                    return Err(invalid(format!(
                        "line {}: expected two vertex indices, got {line:?}",
                        lineno + 1
                    )))
                }
            }
        }
        let needed = edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let n = vertex_count.unwrap_or(needed);
        Self::new(n, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    fn check_enumerable(&self) -> Result<()> {
        if self.vertex_count > ENUMERATION_CAP {
            Err(TpaError::Unsupported(format!(
                "{} vertices exceed the enumeration cap of {ENUMERATION_CAP}; supply an external sampler",
                self.vertex_count
            )))
        } else {
            Ok(())
        }
    }

    /// Number of agreeing edges in the configuration encoded by the low bits of `state`.
    fn agreements_bits(&self, state: u64) -> u32 {
        self.edges
            .iter()
            .filter(|&&(u, v)| (state >> u) & 1 == (state >> v) & 1)
            .count() as u32
    }
}

/// A `{0, 1}` label per vertex.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig(pub Vec<u8>);

impl SpinConfig {
    pub fn zeros(n: usize) -> Self {
        SpinConfig(vec![0; n])
    }

    pub fn from_bits(state: u64, n: usize) -> Self {
        SpinConfig((0..n).map(|i| ((state >> i) & 1) as u8).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Number of edges whose endpoints carry the same label.
pub fn agreements(x: &SpinConfig, g: &LatticeGraph) -> Result<usize> {
    if x.len() != g.vertex_count {
        return Err(invalid(format!(
            "configuration has {} spins but the graph has {} vertices",
            x.len(),
            g.vertex_count
        )));
    }
    if let Some(bad) = x.0.iter().find(|&&s| s > 1) {
        return Err(invalid(format!("spin value {bad} is not 0 or 1")));
    }
    Ok(g.edges.iter().filter(|&&(u, v)| x.0[u] == x.0[v]).count())
}

/// `H(x) = -[1 + sum over edges of (1 - x_i - x_j + 2 x_i x_j)]`.
pub fn hamiltonian(x: &SpinConfig, g: &LatticeGraph) -> Result<f64> {
    Ok(-(1.0 + agreements(x, g)? as f64))
}

fn enumerate(beta: f64, g: &LatticeGraph) -> Result<LogSumExp> {
    g.check_enumerable()?;
    let mut acc = LogSumExp::default();
    for state in 0..(1u64 << g.vertex_count) {
        let neg_h = 1.0 + g.agreements_bits(state) as f64;
        acc.push(beta * neg_h);
    }
    Ok(acc)
}

/// `ln Z(beta) = ln sum_x exp(-beta H(x))` by exhaustive enumeration.
pub fn brute_force_log_z(beta: f64, g: &LatticeGraph) -> Result<f64> {
    enumerate(beta, g).map(|acc| acc.value())
}

/// `Z(beta)` on the linear scale; exactly `2^#V` at `beta = 0`.
pub fn brute_force_z(beta: f64, g: &LatticeGraph) -> Result<f64> {
    enumerate(beta, g).map(|acc| acc.linear_value())
}

/// Average number of draws one run from `beta` down to 0 consumes: `1 + ln Z(beta) - #V ln 2`.
pub fn expected_run_cost(beta: f64, g: &LatticeGraph) -> Result<f64> {
    Ok(1.0 + brute_force_log_z(beta, g)? - g.vertex_count as f64 * LN_2)
}

/// Source of exact draws from `pi_beta(x) ∝ exp(-beta H(x))`.
///
/// Implement this to plug a sampler for graphs beyond the enumeration cap.
/// The run-count guarantees only hold if the draws are exact.
pub trait GibbsSampler: Sync {
    fn sample<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<SpinConfig>;
}

/// Exact sampler built from the full enumeration of the state space.
///
/// Since `H` depends only on the number of agreeing edges, states are grouped
/// by that count: a draw picks a level with weight
/// `#states(level) * exp(beta (1 + level))`, then a uniform state within it.
#[derive(Debug, Clone)]
pub struct ExactGibbsSampler {
    vertex_count: usize,
    log_level_sizes: Vec<f64>,
    levels: Vec<Vec<u32>>,
}

impl ExactGibbsSampler {
    pub fn new(g: &LatticeGraph) -> Result<Self> {
        g.check_enumerable()?;
        let mut levels = vec![Vec::new(); g.edges.len() + 1];
        for state in 0..(1u64 << g.vertex_count) {
            levels[g.agreements_bits(state) as usize].push(state as u32);
        }
        let log_level_sizes = levels
            .iter()
            .map(|l| if l.is_empty() { f64::NEG_INFINITY } else { (l.len() as f64).ln() })
            .collect();
        Ok(Self { vertex_count: g.vertex_count, log_level_sizes, levels })
    }

    fn log_weights(&self, beta: f64) -> Vec<f64> {
        self.log_level_sizes
            .iter()
            .enumerate()
            .map(|(a, &ls)| ls + beta * (1.0 + a as f64))
            .collect()
    }

    /// `ln Z(beta)` from the level sizes.
    pub fn log_z(&self, beta: f64) -> f64 {
        crate::stats::log_sum_exp(&self.log_weights(beta))
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> u64 {
        let logw = self.log_weights(beta);
        let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut level = weights.len() - 1;
        for (a, w) in weights.iter().enumerate() {
            if *w > 0.0 && u < *w {
                level = a;
                break;
            }
            u -= w;
        }
        while self.levels[level].is_empty() {
            level -= 1;
        }
        let bucket = &self.levels[level];
        u64::from(bucket[rng.random_range(0..bucket.len())])
    }
}

impl GibbsSampler for ExactGibbsSampler {
    fn sample<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<SpinConfig> {
        Ok(SpinConfig::from_bits(self.sample_state(beta, rng), self.vertex_count))
    }
}

/// One exact draw from `pi_beta` on a small graph. Builds the enumeration table on every call;
/// hold an [`ExactGibbsSampler`] for repeated draws.
pub fn exact_gibbs_sample<R: Rng + ?Sized>(beta: f64, g: &LatticeGraph, rng: &mut R) -> Result<SpinConfig> {
    ExactGibbsSampler::new(g)?.sample(beta, rng)
}

/// `beta_next = ln(Y) / (-H(x))` for an auxiliary height given as `ln Y`.
pub fn beta_from_height(log_y: f64, neg_h: f64) -> f64 {
    log_y / neg_h
}

/// Draws `Y` uniformly from the open interval `(0, exp(-beta_i H(x)))` and returns
/// `(ln Y, beta_next)`. Works in log space so large `beta_i` cannot overflow.
pub fn gibbs_tpa_step<R: Rng + ?Sized>(
    x: &SpinConfig,
    g: &LatticeGraph,
    beta_i: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let neg_h = -hamiltonian(x, g)?;
    Ok(height_step(neg_h, beta_i, rng))
}

fn height_step<R: Rng + ?Sized>(neg_h: f64, beta_i: f64, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.sample(Open01);
    let log_y = beta_i * neg_h + u.ln();
    (log_y, beta_from_height(log_y, neg_h))
}

/// A point of the auxiliary space: a configuration and `ln` of its height.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxPoint {
    pub config: SpinConfig,
    pub log_y: f64,
}

/// The lifted Ising model as a nested family from `beta` (shell) down to 0 (center).
#[derive(Debug, Clone)]
pub struct GibbsFamily<S = ExactGibbsSampler> {
    graph: LatticeGraph,
    beta: f64,
    sampler: S,
    exact: Option<ExactGibbsSampler>,
}

impl GibbsFamily<ExactGibbsSampler> {
    pub fn exact(graph: LatticeGraph, beta: f64) -> Result<Self> {
        let sampler = ExactGibbsSampler::new(&graph)?;
        Self::build(graph, beta, sampler.clone(), Some(sampler))
    }
}

impl<S: GibbsSampler> GibbsFamily<S> {
    /// Uses an external sampler. Closed-form log measures are unavailable.
    pub fn with_sampler(graph: LatticeGraph, beta: f64, sampler: S) -> Result<Self> {
        Self::build(graph, beta, sampler, None)
    }

    fn build(graph: LatticeGraph, beta: f64, sampler: S, exact: Option<ExactGibbsSampler>) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(invalid(format!("inverse temperature must be finite and >= 0, got {beta}")));
        }
        Ok(Self { graph, beta, sampler, exact })
    }

    pub fn graph(&self) -> &LatticeGraph {
        &self.graph
    }

    /// `ln Z(0) = #V ln 2`, the log measure of the center.
    pub fn log_center_measure(&self) -> f64 {
        self.graph.vertex_count as f64 * LN_2
    }
}

impl<S: GibbsSampler> NestedFamily for GibbsFamily<S> {
    type Point = AuxPoint;

    fn beta_shell(&self) -> f64 {
        self.beta
    }

    fn beta_center(&self) -> f64 {
        0.0
    }

    fn sample_within<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<Draw<AuxPoint>> {
        let config = self.sampler.sample(beta, rng)?;
        let neg_h = -hamiltonian(&config, &self.graph)?;
        let (log_y, next) = height_step(neg_h, beta, rng);
        Ok(Draw { point: AuxPoint { config, log_y }, beta: next })
    }

    fn log_measure(&self, beta: f64) -> Option<f64> {
        self.exact.as_ref().map(|e| e.log_z(beta))
    }
}
