//! Absorbing-chain view of a walk under Pac-Man termination.
//!
//! The augmented state space appends a single death state after the
//! transient states. A Pac-Man with `ζ = 1` is merged into the death state;
//! a Pac-Man with `ζ < 1` stays transient, keeps a `(1 − ζ)`-scaled copy of
//! its row and sends mass `ζ` to death.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, TransitionMatrix};

/// One adversarial node and its termination probability ζ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacMan {
    pub node: usize,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryConfig {
    pacmen: Vec<PacMan>,
}

impl AdversaryConfig {
    pub fn new(mut pacmen: Vec<PacMan>) -> Result<Self> {
        if pacmen.is_empty() {
            return Err(Error::invalid("at least one Pac-Man node is required"));
        }
        for p in &pacmen {
            if !(p.zeta > 0.0 && p.zeta <= 1.0) {
                return Err(Error::invalid(format!("termination probability {} outside (0,1]", p.zeta)));
            }
        }
        pacmen.sort_by_key(|p| p.node);
        if pacmen.windows(2).any(|w| w[0].node == w[1].node) {
            return Err(Error::invalid("duplicate Pac-Man node"));
        }
        Ok(Self { pacmen })
    }

    /// Pac-Man at node 1 (internal index 0).
    pub fn single(zeta: f64) -> Result<Self> {
        Self::new(vec![PacMan { node: 0, zeta }])
    }

    /// The first `k` nodes are Pac-Men sharing `zeta`.
    pub fn first_k(k: usize, zeta: f64) -> Result<Self> {
        Self::new((0..k).map(|node| PacMan { node, zeta }).collect())
    }

    pub fn pacmen(&self) -> &[PacMan] {
        &self.pacmen
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.pacmen.iter().map(|p| p.node).collect()
    }

    pub fn count(&self) -> usize {
        self.pacmen.len()
    }

    /// ζ of `node`, if it is a Pac-Man.
    pub fn zeta_of(&self, node: usize) -> Option<f64> {
        self.pacmen.iter().find(|p| p.node == node).map(|p| p.zeta)
    }

    /// Per-node ζ lookup table of length `n`.
    pub fn zeta_table(&self, n: usize) -> Vec<Option<f64>> {
        let mut t = vec![None; n];
        for p in &self.pacmen {
            t[p.node] = Some(p.zeta);
        }
        t
    }

    pub fn min_zeta(&self) -> f64 {
        self.pacmen.iter().map(|p| p.zeta).fold(f64::INFINITY, f64::min)
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.pacmen.iter().any(|p| p.node >= n) {
            return Err(Error::invalid(format!("Pac-Man node outside 1..={n}")));
        }
        if self.pacmen.len() >= n {
            return Err(Error::invalid("at least one benign node is required"));
        }
        Ok(())
    }
}

/// `P′` together with its transient block `Q` and absorption column `R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedChain {
    base: TransitionMatrix,
    adversary: AdversaryConfig,
    p_prime: TransitionMatrix,
    q_sub: DenseMatrix,
    r_vec: Vec<f64>,
    /// Node index of each transient state, in state order.
    transient: Vec<usize>,
}

/// Builds the absorbing chain for walk matrix `p` under `adv`.
pub fn augment(p: &TransitionMatrix, adv: &AdversaryConfig) -> Result<AugmentedChain> {
    let n = p.dim();
    adv.validate_for(n)?;
    let zeta = adv.zeta_table(n);
    let absorbing_node = |u: usize| zeta[u] == Some(1.0);
    let transient: Vec<usize> = (0..n).filter(|&u| !absorbing_node(u)).collect();
    let t = transient.len();

    let mut pp = DenseMatrix::zeros(t + 1, t + 1);
    for (i, &u) in transient.iter().enumerate() {
        let keep = 1.0 - zeta[u].unwrap_or(0.0);
        let row = p.row(u);
        let mut to_death = zeta[u].unwrap_or(0.0);
        for (j, &v) in transient.iter().enumerate() {
            pp[(i, j)] = keep * row[v];
        }
        for v in (0..n).filter(|&v| absorbing_node(v)) {
            to_death += keep * row[v];
        }
        pp[(i, t)] = to_death;
    }
    pp[(t, t)] = 1.0;

    let mut q = DenseMatrix::zeros(t, t);
    let mut r = vec![0.0; t];
    for i in 0..t {
        q.row_mut(i).copy_from_slice(&pp.row(i)[..t]);
        r[i] = pp[(i, t)];
    }
    let p_prime = TransitionMatrix::new(pp)?;
    Ok(AugmentedChain {
        base: p.clone(),
        adversary: adv.clone(),
        p_prime,
        q_sub: q,
        r_vec: r,
        transient,
    })
}

impl AugmentedChain {
    /// The walk matrix `P` the chain was built from.
    pub fn base(&self) -> &TransitionMatrix {
        &self.base
    }

    pub fn adversary(&self) -> &AdversaryConfig {
        &self.adversary
    }

    pub fn node_count(&self) -> usize {
        self.base.dim()
    }

    pub fn p_prime(&self) -> &TransitionMatrix {
        &self.p_prime
    }

    pub fn q_sub(&self) -> &DenseMatrix {
        &self.q_sub
    }

    pub fn r_vec(&self) -> &[f64] {
        &self.r_vec
    }

    pub fn transient_states(&self) -> &[usize] {
        &self.transient
    }

    /// State index of `node`, when transient.
    pub fn state_of(&self, node: usize) -> Option<usize> {
        self.transient.binary_search(&node).ok()
    }

    /// Nodes that are neither Pac-Man nor death.
    pub fn benign_nodes(&self) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&u| self.adversary.zeta_of(u).is_none())
            .collect()
    }

    /// Lifts a vector over transient states into node space (zeros elsewhere).
    pub fn embed(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.transient.len());
        let mut out = vec![0.0; self.node_count()];
        for (&u, &x) in self.transient.iter().zip(v) {
            out[u] = x;
        }
        out
    }

    /// Largest `|Σ_v Q_uv + R_u − 1|` over transient rows.
    pub fn conservation_residual(&self) -> f64 {
        (0..self.transient.len())
            .map(|i| (self.q_sub.row_sum(i) + self.r_vec[i] - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `P′` as a dense text matrix.
    pub fn to_text(&self) -> String {
        self.p_prime.matrix().to_text()
    }
}

/// Minimum-hop hitting constants of the Pac-Man set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HittingConstants {
    /// `max_u d_u` over benign `u`.
    pub d: usize,
    /// `min_u c_u`, the smallest `d_u`-step probability of reaching Pac-Man.
    pub c: f64,
    /// `(node, d_u, c_u)` per benign node.
    pub per_node: Vec<(usize, usize, f64)>,
}

/// `d_u` is the fewest steps from `u` to a Pac-Man node with positive
/// probability; `c_u` is the probability of reaching one in exactly `d_u`
/// steps. At the minimum hop count the walk cannot have met a Pac-Man
/// earlier, so first-arrival and n-step occupation coincide.
pub fn hitting_constants(chain: &AugmentedChain) -> Result<HittingConstants> {
    let p = chain.base();
    let n = p.dim();
    let pac = chain.adversary().nodes();
    let benign = chain.benign_nodes();

    // BFS over the support of P, backwards from the Pac-Man set.
    let mut dist: Vec<Option<usize>> = vec![None; n];
    let mut frontier: Vec<usize> = pac.clone();
    for &k in &pac {
        dist[k] = Some(0);
    }
    let mut level = 0;
    while !frontier.is_empty() {
        level += 1;
        let mut next = Vec::new();
        for &u in &benign {
            if dist[u].is_none() && frontier.iter().any(|&v| p[(u, v)] > 0.0) {
                dist[u] = Some(level);
                next.push(u);
            }
        }
        frontier = next;
    }
    if let Some(&u) = benign.iter().find(|&&u| dist[u].is_none()) {
        return Err(Error::Unreachable(u));
    }

    // first[u] = Pr(first Pac-Man arrival from u happens at step s), s = 1, 2, ...
    let d_max = benign.iter().filter_map(|&u| dist[u]).max().unwrap_or(0);
    let mut first: Vec<f64> = (0..n).map(|u| pac.iter().map(|&k| p[(u, k)]).sum()).collect();
    let mut c_of = vec![f64::NAN; n];
    for step in 1..=d_max {
        for &u in &benign {
            if dist[u] == Some(step) {
                c_of[u] = first[u];
            }
        }
        let prev = first.clone();
        for u in 0..n {
            first[u] = benign.iter().map(|&w| p[(u, w)] * prev[w]).sum();
        }
    }

    let per_node: Vec<(usize, usize, f64)> = benign
        .iter()
        .map(|&u| (u, dist[u].unwrap_or(0), c_of[u]))
        .collect();
    let c = per_node.iter().map(|x| x.2).fold(f64::INFINITY, f64::min);
    Ok(HittingConstants { d: d_max, c, per_node })
}
