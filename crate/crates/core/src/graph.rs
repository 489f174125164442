//! Benchmark topologies and the Metropolis–Hastings walk matrix.
//!
//! Nodes are indexed `0..N` internally; every external format (edge lists,
//! events, CLI output) uses 1-based labels, so internal node `0` is node `1`,
//! the default Pac-Man location.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, TransitionMatrix};
use crate::rng::{self, Stream};

/// Default number of samples drawn before random topologies give up.
pub const DEFAULT_RESAMPLE_BUDGET: u32 = 1000;

/// Tolerance on `Σπ = 1`.
pub const TARGET_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Complete,
    RandomRegular { degree: usize },
    Ring,
    ErdosRenyi { edge_probability: f64 },
    /// Edge set supplied by the caller (tests, parsed edge lists).
    Custom,
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Topology::Complete => write!(f, "complete"),
            Topology::RandomRegular { degree } => write!(f, "random_regular(d={degree})"),
            Topology::Ring => write!(f, "ring"),
            Topology::ErdosRenyi { edge_probability } => write!(f, "erdos_renyi(p={edge_probability})"),
            Topology::Custom => write!(f, "custom"),
        }
    }
}

/// Undirected simple graph plus the target sampling distribution π.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    node_count: usize,
    /// Sorted, deduplicated pairs `(u, v)` with `u < v`.
    edges: Vec<(usize, usize)>,
    topology: Topology,
    target: Vec<f64>,
    /// Samples rejected before this graph was accepted.
    resamples: u32,
}

impl GraphSpec {
    /// Graph with explicit edges and target distribution.
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>, target: Vec<f64>) -> Result<Self> {
        if node_count == 0 {
            return Err(Error::invalid("graph needs at least one node"));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::invalid(format!("edge ({u},{v}) out of range for N={node_count}")));
            }
            if u == v {
                return Err(Error::invalid(format!("self-loop at node {u}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        validate_target(&target, node_count)?;
        Ok(Self {
            node_count,
            edges: set.into_iter().collect(),
            topology: Topology::Custom,
            target,
            resamples: 0,
        })
    }

    /// Graph with explicit edges and uniform π.
    pub fn with_uniform_target(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::new(node_count, edges, uniform(node_count))
    }

    pub fn set_target(&mut self, target: Vec<f64>) -> Result<()> {
        validate_target(&target, self.node_count)?;
        self.target = target;
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn resamples(&self) -> u32 {
        self.resamples
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_distances(&[0], &[]).iter().all(Option::is_some)
    }

    /// Benign nodes stay mutually reachable once every node in `pacman` is removed.
    pub fn is_robustly_connected(&self, pacman: &[usize]) -> bool {
        if !self.is_connected() {
            return false;
        }
        let Some(start) = (0..self.node_count).find(|u| !pacman.contains(u)) else {
            return false;
        };
        let dist = self.bfs_distances(&[start], pacman);
        (0..self.node_count).all(|u| pacman.contains(&u) || dist[u].is_some())
    }

    /// Hop distances from the `sources` set, never entering `blocked` nodes.
    pub fn bfs_distances(&self, sources: &[usize], blocked: &[usize]) -> Vec<Option<usize>> {
        let adj = self.adjacency();
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        for &s in sources {
            dist[s] = Some(0);
            queue.push_back(s);
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &v in &adj[u] {
                if dist[v].is_none() && !blocked.contains(&v) {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// `"N"` on the first line, then one 1-based `"u v"` pair per line.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("{}\n", self.node_count);
        for &(u, v) in &self.edges {
            let _ = writeln!(s, "{} {}", u + 1, v + 1);
        }
        s
    }

    /// Parses [`GraphSpec::to_edge_list`] output; π defaults to uniform.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::Parse {
            what: "edge list",
            line: 1,
            reason: "empty input".into(),
        })?;
        let n: usize = first.trim().parse().map_err(|e: std::num::ParseIntError| Error::Parse {
            what: "edge list",
            line: 1,
            reason: e.to_string(),
        })?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let parse_err = |reason: String| Error::Parse {
                what: "edge list",
                line: i + 1,
                reason,
            };
            let mut it = line.split_whitespace();
            let mut next = || -> Result<usize> {
                let tok = it.next().ok_or_else(|| parse_err("expected two node labels".into()))?;
                let label: usize = tok.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?;
                if label == 0 {
                    return Err(parse_err("node labels are 1-based".into()));
                }
                Ok(label - 1)
            };
            let u = next()?;
            let v = next()?;
            edges.push((u, v));
        }
        Self::with_uniform_target(n, edges)
    }

    /// One decimal per line, shortest round-trip representation.
    pub fn target_to_text(&self) -> String {
        self.target.iter().map(|p| format!("{p:?}\n")).collect()
    }

    pub fn target_from_text(text: &str) -> Result<Vec<f64>> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|e| Error::Parse {
                    what: "target distribution",
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn validate_target(target: &[f64], n: usize) -> Result<()> {
    if target.len() != n {
        return Err(Error::invalid(format!("target has length {}, expected {n}", target.len())));
    }
    if let Some(p) = target.iter().find(|p| !(**p > 0.0)) {
        return Err(Error::invalid(format!("target entries must be positive, found {p}")));
    }
    let s: f64 = target.iter().sum();
    if (s - 1.0).abs() > TARGET_SUM_TOL {
        return Err(Error::invalid(format!("target sums to {s}")));
    }
    Ok(())
}

/// Options for [`generate_topology_with`].
#[derive(Debug, Clone)]
pub struct GenerateOptions {
    pub resample_budget: u32,
    /// Nodes that must be removable without disconnecting the rest.
    pub pacman: Vec<usize>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            resample_budget: DEFAULT_RESAMPLE_BUDGET,
            pacman: vec![0],
        }
    }
}

/// Samples a topology, robustly connected with respect to Pac-Man node 1.
pub fn generate_topology(topology: Topology, n: usize, seed: u64) -> Result<GraphSpec> {
    generate_topology_with(topology, n, seed, &GenerateOptions::default())
}

pub fn generate_topology_with(topology: Topology, n: usize, seed: u64, opts: &GenerateOptions) -> Result<GraphSpec> {
    if n < 3 {
        return Err(Error::invalid(format!("benchmark topologies need N >= 3, got {n}")));
    }
    match topology {
        Topology::RandomRegular { degree } => {
            if degree == 0 || degree >= n {
                return Err(Error::invalid(format!("random regular degree {degree} impossible for N={n}")));
            }
            if (n * degree) % 2 == 1 {
                return Err(Error::invalid(format!("N*d must be even (N={n}, d={degree})")));
            }
        }
        Topology::ErdosRenyi { edge_probability: p } => {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::invalid(format!("edge probability {p} outside (0,1]")));
            }
        }
        Topology::Custom => return Err(Error::invalid("custom topologies are not generated")),
        Topology::Complete | Topology::Ring => {}
    }
    if opts.pacman.iter().any(|&k| k >= n) {
        return Err(Error::invalid("Pac-Man node out of range"));
    }

    for attempt in 0..opts.resample_budget {
        let mut rng = rng::stream(rng::derive_seed(seed, u64::from(attempt)), Stream::Topology);
        let edges = match topology {
            Topology::Complete => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
            Topology::Ring => (0..n).map(|u| (u, (u + 1) % n)).collect(),
            Topology::ErdosRenyi { edge_probability } => (0..n)
                .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                .filter(|_| rng.gen::<f64>() < edge_probability)
                .collect(),
            Topology::RandomRegular { degree } => match sample_regular(n, degree, &mut rng) {
                Some(e) => e,
                None => continue,
            },
            Topology::Custom => unreachable!(),
        };
        let mut g = GraphSpec::with_uniform_target(n, edges)?;
        if g.is_robustly_connected(&opts.pacman) {
            g.topology = topology;
            g.resamples = attempt;
            return Ok(g);
        }
    }
    Err(Error::ResampleBudgetExhausted {
        topology: topology.to_string(),
        nodes: n,
        attempts: opts.resample_budget,
    })
}

/// Random stub pairing that only accepts pairs keeping the graph simple.
/// Returns `None` when it paints itself into a corner.
fn sample_regular<R: Rng>(n: usize, d: usize, rng: &mut R) -> Option<Vec<(usize, usize)>> {
    let mut stubs: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat(u).take(d)).collect();
    let mut present = vec![false; n * n];
    let mut edges = Vec::with_capacity(n * d / 2);
    while !stubs.is_empty() {
        let mut placed = false;
        for _ in 0..100 {
            let i = rng.gen_range(0..stubs.len());
            let j = rng.gen_range(0..stubs.len());
            let (u, v) = (stubs[i], stubs[j]);
            if i == j || u == v || present[u * n + v] {
                continue;
            }
            present[u * n + v] = true;
            present[v * n + u] = true;
            edges.push((u.min(v), u.max(v)));
            let (hi, lo) = (i.max(j), i.min(j));
            stubs.swap_remove(hi);
            stubs.swap_remove(lo);
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    Some(edges)
}

/// Metropolis–Hastings matrix with stationary distribution π.
///
/// The proposal at `u` is uniform over `{u} ∪ neighbors(u)`; a move to `v` is
/// accepted with `min(1, π_v·|prop(u)| / (π_u·|prop(v)|))` and rejected mass
/// stays on the self-loop. Including `u` in its own proposal makes every
/// diagonal entry positive, so the chain is aperiodic on any topology.
pub fn metropolis_hastings(g: &GraphSpec) -> TransitionMatrix {
    let n = g.node_count();
    let adj = g.adjacency();
    let pi = g.target();
    let prop: Vec<f64> = adj.iter().map(|a| (a.len() + 1) as f64).collect();
    let mut m = DenseMatrix::zeros(n, n);
    for u in 0..n {
        let mut off = 0.0;
        for &v in &adj[u] {
            let accept = (pi[v] * prop[u] / (pi[u] * prop[v])).min(1.0);
            let p = accept / prop[u];
            m[(u, v)] = p;
            off += p;
        }
        m[(u, u)] = 1.0 - off;
    }
    TransitionMatrix::new(m).expect("Metropolis-Hastings rows are stochastic by construction")
}

/// `‖πᵀP − πᵀ‖∞`.
pub fn stationary_check(p: &TransitionMatrix, pi: &[f64]) -> f64 {
    assert_eq!(p.dim(), pi.len(), "stationary_check: shape mismatch");
    p.left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_four_has_six_edges() {
        let g = generate_topology(Topology::Complete, 4, 9).unwrap();
        assert_eq!(g.edges().len(), 6);
        assert!(g.degrees().iter().all(|&d| d == 3));
    }

    #[test]
    fn ring_hundred_is_two_regular() {
        let g = generate_topology(Topology::Ring, 100, 1).unwrap();
        assert_eq!(g.edges().len(), 100);
        assert!(g.degrees().iter().all(|&d| d == 2));
    }

    #[test]
    fn erdos_renyi_is_connected_by_bfs() {
        let g = generate_topology(Topology::ErdosRenyi { edge_probability: 0.1 }, 100, 5).unwrap();
        // Independent reachability check: union-find over the raw edge set.
        let mut parent: Vec<usize> = (0..100).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            if p[x] != x {
                let r = find(p, p[x]);
                p[x] = r;
            }
            p[x]
        }
        for &(u, v) in g.edges() {
            let (a, b) = (find(&mut parent, u), find(&mut parent, v));
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        assert!((0..100).all(|u| find(&mut parent, u) == root));
        assert!(g.is_robustly_connected(&[0]));
    }

    #[test]
    fn random_regular_degrees() {
        let g = generate_topology(Topology::RandomRegular { degree: 8 }, 100, 3).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 8));
        assert_eq!(g.edges().len(), 400);
    }

    #[test]
    fn rejects_impossible_parameters() {
        assert!(generate_topology(Topology::RandomRegular { degree: 5 }, 5, 0).is_err());
        assert!(generate_topology(Topology::RandomRegular { degree: 3 }, 7, 0).is_err());
        assert!(generate_topology(Topology::ErdosRenyi { edge_probability: 0.0 }, 10, 0).is_err());
        assert!(generate_topology(Topology::Complete, 2, 0).is_err());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let opts = GenerateOptions {
            resample_budget: 3,
            pacman: vec![0],
        };
        let err = generate_topology_with(Topology::ErdosRenyi { edge_probability: 0.001 }, 50, 0, &opts).unwrap_err();
        assert!(matches!(err, Error::ResampleBudgetExhausted { attempts: 3, .. }));
    }

    #[test]
    fn same_seed_same_graph() {
        let t = Topology::ErdosRenyi { edge_probability: 0.1 };
        let a = generate_topology(t, 60, 11).unwrap();
        let b = generate_topology(t, 60, 11).unwrap();
        assert_eq!(a.to_edge_list(), b.to_edge_list());
        assert_eq!(a, b);
    }

    #[test]
    fn mh_complete_is_uniform() {
        let g = generate_topology(Topology::Complete, 100, 0).unwrap();
        let p = metropolis_hastings(&g);
        for u in 0..100 {
            for v in 0..100 {
                assert!((p[(u, v)] - 0.01).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mh_single_edge() {
        let g = GraphSpec::with_uniform_target(2, [(0, 1)]).unwrap();
        let p = metropolis_hastings(&g);
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(p.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn mh_ring_four_is_thirds() {
        let g = generate_topology(Topology::Ring, 4, 0).unwrap();
        let p = metropolis_hastings(&g);
        for u in 0..4 {
            assert!((p[(u, u)] - 1.0 / 3.0).abs() < 1e-15);
            assert!((p[(u, (u + 1) % 4)] - 1.0 / 3.0).abs() < 1e-15);
            assert!((p[(u, (u + 3) % 4)] - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(p[(u, (u + 2) % 4)], 0.0);
        }
        assert!(stationary_check(&p, g.target()) < 1e-12);
    }

    #[test]
    fn stationary_check_identity_is_zero() {
        let p = TransitionMatrix::identity(3);
        assert_eq!(stationary_check(&p, &[0.2, 0.3, 0.5]), 0.0);
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_topology(Topology::RandomRegular { degree: 4 }, 20, 2).unwrap();
        let text = g.to_edge_list();
        let back = GraphSpec::from_edge_list(&text).unwrap();
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.to_edge_list(), text);
    }

    #[test]
    fn target_round_trip_is_exact() {
        let mut g = GraphSpec::with_uniform_target(3, [(0, 1), (1, 2)]).unwrap();
        g.set_target(vec![0.1, 0.2, 0.7000000000000001]).unwrap();
        let back = GraphSpec::target_from_text(&g.target_to_text()).unwrap();
        assert_eq!(back, g.target());
    }

    #[test]
    fn edge_list_rejects_zero_label() {
        assert!(GraphSpec::from_edge_list("3\n0 1\n").is_err());
    }
}
