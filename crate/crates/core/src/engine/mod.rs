//! Discrete-time Create-If-Late simulator.
//!
//! Each slot runs a fixed phase order:
//!
//! 1. walks that moved onto a Pac-Man node are terminated with its ζ;
//! 2. every benign node hosting a walk records the visit and caches a
//!    snapshot of one uniformly chosen hosted walk;
//! 3. every benign node unvisited for more than `A_u` slots creates, with
//!    probability `q`, a clone of its cached snapshot;
//! 4. every walk on a benign node performs one local update;
//! 5. every walk moves one step according to the original walk matrix `P`.
//!
//! `Z_t` is the population after phase 3. The snapshot in phase 2 is taken
//! before the local update, so a clone replays the update its source made at
//! that node.

mod decafork;
mod dominated;
mod lineage;
mod trace;

pub use decafork::{run_decafork_baseline, DecaforkConfig};
pub use dominated::{renewal_lower_bound, run_dominated_single, DominatedOptions, DominatedRun, IdleModel, RenewalCycle};
pub use lineage::{extract_chain, extract_surviving_chain, ChainSegment, WalkChain};
pub use trace::{Event, EventKind, ExtinctionInterval, PopulationTrace, WalkRecord};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::AugmentedChain;
use crate::error::{Error, Result};
use crate::matrix::TransitionMatrix;
use crate::rng::{self, Stream};

/// Model payload carried by walks.
///
/// Implementations must not draw randomness: a run with a payload follows
/// exactly the same sample path as the population-only run with the same seed.
pub trait LocalUpdate: Sync {
    fn initial_model(&self) -> Vec<f64>;

    /// One local step at `node`; `local_iteration` is the walk's count of
    /// updates so far.
    fn update(&self, model: &mut [f64], node: usize, local_iteration: u64);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Thresholds {
    Uniform(u64),
    /// One entry per node; Pac-Man entries are ignored.
    PerNode(Vec<u64>),
}

impl Thresholds {
    fn table(&self, n: usize) -> Vec<u64> {
        match self {
            Thresholds::Uniform(a) => vec![*a; n],
            Thresholds::PerNode(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Independent uniform draws over benign nodes.
    UniformRandom,
    /// Explicit node indices (0-based), one per initial walk.
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CilConfig {
    pub thresholds: Thresholds,
    pub creation_probability: f64,
    pub initial_walks: usize,
    pub placement: Placement,
    pub horizon: u64,
    pub seed: u64,
}

impl CilConfig {
    /// Uniform threshold `a`, creation probability `q`, `z0` walks placed uniformly.
    pub fn uniform(a: u64, q: f64, z0: usize, horizon: u64, seed: u64) -> Self {
        Self {
            thresholds: Thresholds::Uniform(a),
            creation_probability: q,
            initial_walks: z0,
            placement: Placement::UniformRandom,
            horizon,
            seed,
        }
    }

    pub fn validate(&self, chain: &AugmentedChain) -> Result<()> {
        let n = chain.node_count();
        if let Thresholds::PerNode(v) = &self.thresholds {
            if v.len() != n {
                return Err(Error::invalid(format!("expected {n} thresholds, got {}", v.len())));
            }
        }
        let table = self.thresholds.table(n);
        if chain.benign_nodes().iter().any(|&u| table[u] < 1) {
            return Err(Error::invalid("creation thresholds must be >= 1"));
        }
        let q = self.creation_probability;
        if !(q > 0.0 && q <= 1.0) {
            return Err(Error::invalid(format!("creation probability {q} outside (0,1]")));
        }
        if self.initial_walks < 1 {
            return Err(Error::invalid("at least one initial walk is required"));
        }
        if let Placement::Explicit(nodes) = &self.placement {
            if nodes.len() != self.initial_walks {
                return Err(Error::invalid("explicit placement length must equal the initial walk count"));
            }
            if let Some(&u) = nodes.iter().find(|&&u| u >= n || chain.adversary().zeta_of(u).is_some()) {
                return Err(Error::invalid(format!("initial walk placed on non-benign node {}", u + 1)));
            }
        }
        Ok(())
    }

    pub fn min_threshold(&self, chain: &AugmentedChain) -> u64 {
        let table = self.thresholds.table(chain.node_count());
        chain.benign_nodes().iter().map(|&u| table[u]).min().unwrap_or(0)
    }
}

/// One active random walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkToken {
    pub walk_id: u64,
    pub current_node: usize,
    pub birth_time: u64,
    pub parent_id: Option<u64>,
    pub model: Vec<f64>,
    pub local_iteration_count: u64,
}

/// Snapshot of a walk held in a node cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedToken {
    /// `None` for the initial model every node starts with.
    pub source: Option<u64>,
    pub model: Vec<f64>,
    pub local_iteration_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLedger {
    pub last_visit: u64,
    pub cached: CachedToken,
    pub threshold: u64,
}

/// Counts of one executed slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotRecord {
    pub t: u64,
    pub creations: u32,
    pub terminations: u32,
    pub z: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub record_events: bool,
    pub record_lineage: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            record_events: false,
            record_lineage: true,
        }
    }
}

impl RunOptions {
    /// Only the per-slot counts.
    pub fn counts_only() -> Self {
        Self {
            record_events: false,
            record_lineage: false,
        }
    }

    pub fn full() -> Self {
        Self {
            record_events: true,
            record_lineage: true,
        }
    }
}

/// CDF sampler over the nonzero entries of each row of `P`.
#[derive(Debug, Clone)]
pub(crate) struct RowSampler {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    cdf: Vec<f64>,
}

impl RowSampler {
    pub(crate) fn new(p: &TransitionMatrix) -> Self {
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut cdf = Vec::new();
        for u in 0..p.dim() {
            let mut acc = 0.0;
            for (v, &x) in p.row(u).iter().enumerate() {
                if x > 0.0 {
                    acc += x;
                    targets.push(v as u32);
                    cdf.push(acc);
                }
            }
            offsets.push(targets.len());
        }
        Self { offsets, targets, cdf }
    }

    #[inline]
    pub(crate) fn sample<R: Rng>(&self, u: usize, rng: &mut R) -> usize {
        let (lo, hi) = (self.offsets[u], self.offsets[u + 1]);
        let cdf = &self.cdf[lo..hi];
        let x = rng.gen::<f64>() * cdf[cdf.len() - 1];
        let k = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
        self.targets[lo + k] as usize
    }
}

pub(crate) fn initial_positions(placement: &Placement, z0: usize, benign: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    match placement {
        Placement::UniformRandom => (0..z0).map(|_| benign[rng.gen_range(0..benign.len())]).collect(),
        Placement::Explicit(nodes) => nodes.clone(),
    }
}

/// CIL simulator state; owns all randomness of one run.
pub struct CilSimulation<'a> {
    sampler: RowSampler,
    zeta: Vec<Option<f64>>,
    benign: Vec<usize>,
    q: f64,
    payload: Option<&'a dyn LocalUpdate>,
    opts: RunOptions,

    t: u64,
    next_id: u64,
    tokens: Vec<WalkToken>,
    ledgers: Vec<NodeLedger>,

    movement: ChaCha8Rng,
    termination: ChaCha8Rng,
    creation: ChaCha8Rng,
    tie_break: ChaCha8Rng,

    host_count: Vec<u32>,
    host_choice: Vec<usize>,
    touched: Vec<usize>,
    killed: Vec<(u64, usize)>,

    trace: PopulationTrace,
}

impl<'a> CilSimulation<'a> {
    pub fn new(chain: &AugmentedChain, cfg: &CilConfig, opts: RunOptions) -> Result<Self> {
        Self::build(chain, cfg, opts, None)
    }

    /// Simulation whose walks carry and update a model.
    pub fn with_payload(chain: &AugmentedChain, cfg: &CilConfig, opts: RunOptions, payload: &'a dyn LocalUpdate) -> Result<Self> {
        Self::build(chain, cfg, opts, Some(payload))
    }

    fn build(chain: &AugmentedChain, cfg: &CilConfig, opts: RunOptions, payload: Option<&'a dyn LocalUpdate>) -> Result<Self> {
        cfg.validate(chain)?;
        let n = chain.node_count();
        let benign = chain.benign_nodes();
        let thresholds = cfg.thresholds.table(n);
        let initial_model = payload.map(|p| p.initial_model()).unwrap_or_default();
        let ledgers = (0..n)
            .map(|u| NodeLedger {
                last_visit: 0,
                cached: CachedToken {
                    source: None,
                    model: initial_model.clone(),
                    local_iteration_count: 0,
                },
                threshold: thresholds[u],
            })
            .collect();

        let mut placement = rng::stream(cfg.seed, Stream::Placement);
        let positions = initial_positions(&cfg.placement, cfg.initial_walks, &benign, &mut placement);
        let mut sim = Self {
            sampler: RowSampler::new(chain.base()),
            zeta: chain.adversary().zeta_table(n),
            benign,
            q: cfg.creation_probability,
            payload,
            opts,
            t: 0,
            next_id: 0,
            tokens: Vec::with_capacity(cfg.initial_walks),
            ledgers,
            movement: rng::stream(cfg.seed, Stream::Movement),
            termination: rng::stream(cfg.seed, Stream::Termination),
            creation: rng::stream(cfg.seed, Stream::Creation),
            tie_break: rng::stream(cfg.seed, Stream::CacheTieBreak),
            host_count: vec![0; n],
            host_choice: vec![0; n],
            touched: Vec::new(),
            killed: Vec::new(),
            trace: PopulationTrace::default(),
        };
        for node in positions {
            let id = sim.spawn(node, None, initial_model.clone(), 0);
            sim.trace.initial_walks.push(id);
        }
        Ok(sim)
    }

    fn spawn(&mut self, node: usize, parent: Option<u64>, model: Vec<f64>, iterations: u64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tokens.push(WalkToken {
            walk_id: id,
            current_node: node,
            birth_time: self.t,
            parent_id: parent,
            model,
            local_iteration_count: iterations,
        });
        if self.opts.record_lineage {
            self.trace.walks.push(WalkRecord {
                id,
                parent,
                birth: self.t,
                death: None,
                birth_node: node,
                pacman_slots: Vec::new(),
            });
        }
        id
    }

    /// Current slot (the one the next [`step`](Self::step) executes).
    pub fn time(&self) -> u64 {
        self.t
    }

    pub fn tokens(&self) -> &[WalkToken] {
        &self.tokens
    }

    pub fn ledgers(&self) -> &[NodeLedger] {
        &self.ledgers
    }

    pub fn trace(&self) -> &PopulationTrace {
        &self.trace
    }

    /// Executes one slot.
    pub fn step(&mut self) -> SlotRecord {
        let t = self.t;

        // 1. termination on arrival at a Pac-Man node
        self.killed.clear();
        {
            let zeta = &self.zeta;
            let rng = &mut self.termination;
            let killed = &mut self.killed;
            self.tokens.retain(|tok| match zeta[tok.current_node] {
                Some(z) => {
                    let kill = z >= 1.0 || rng.gen::<f64>() < z;
                    if kill {
                        killed.push((tok.walk_id, tok.current_node));
                    }
                    !kill
                }
                None => true,
            });
        }
        let terminations = self.killed.len() as u32;
        for &(id, node) in &self.killed {
            if self.opts.record_lineage {
                self.trace.walks[id as usize].death = Some(t);
            }
            if self.opts.record_events {
                self.trace.events.push(Event {
                    t,
                    kind: EventKind::Terminated,
                    walk: id,
                    node: node + 1,
                });
            }
        }

        // 2. visit recording and cache refresh
        for (i, tok) in self.tokens.iter().enumerate() {
            let u = tok.current_node;
            if self.zeta[u].is_some() {
                if self.opts.record_lineage {
                    self.trace.walks[tok.walk_id as usize].pacman_slots.push(t);
                }
                continue;
            }
            self.host_count[u] += 1;
            let c = self.host_count[u];
            if c == 1 {
                self.touched.push(u);
                self.host_choice[u] = i;
            } else if self.tie_break.gen_range(0..c) == 0 {
                self.host_choice[u] = i;
            }
        }
        for &u in &self.touched {
            let tok = &self.tokens[self.host_choice[u]];
            let ledger = &mut self.ledgers[u];
            ledger.last_visit = t;
            ledger.cached.source = Some(tok.walk_id);
            ledger.cached.model.clone_from(&tok.model);
            ledger.cached.local_iteration_count = tok.local_iteration_count;
            if self.opts.record_events && self.host_count[u] > 1 {
                self.trace.events.push(Event {
                    t,
                    kind: EventKind::MergedCache,
                    walk: tok.walk_id,
                    node: u + 1,
                });
            }
            self.host_count[u] = 0;
        }
        self.touched.clear();

        // 3. lateness check
        let mut creations = 0u32;
        for i in 0..self.benign.len() {
            let u = self.benign[i];
            let ledger = &self.ledgers[u];
            if t - ledger.last_visit <= ledger.threshold {
                continue;
            }
            if self.q < 1.0 && self.creation.gen::<f64>() >= self.q {
                continue;
            }
            let cached = ledger.cached.clone();
            let id = self.spawn(u, cached.source, cached.model, cached.local_iteration_count);
            self.ledgers[u].last_visit = t;
            creations += 1;
            if self.opts.record_events {
                self.trace.events.push(Event {
                    t,
                    kind: EventKind::Created,
                    walk: id,
                    node: u + 1,
                });
            }
        }

        // 4. local computation
        for tok in &mut self.tokens {
            if self.zeta[tok.current_node].is_none() {
                if let Some(p) = self.payload {
                    p.update(&mut tok.model, tok.current_node, tok.local_iteration_count);
                }
                tok.local_iteration_count += 1;
            }
        }

        // 5. movement under the original P
        for tok in &mut self.tokens {
            tok.current_node = self.sampler.sample(tok.current_node, &mut self.movement);
        }

        let z = self.tokens.len() as u32;
        self.trace.z.push(z);
        self.trace.creations.push(creations);
        self.trace.terminations.push(terminations);
        self.t += 1;
        SlotRecord {
            t,
            creations,
            terminations,
            z,
        }
    }

    pub fn into_trace(self) -> PopulationTrace {
        self.trace
    }
}

/// Runs `cfg.horizon` slots of CIL.
pub fn run(chain: &AugmentedChain, cfg: &CilConfig, opts: RunOptions) -> Result<PopulationTrace> {
    let mut sim = CilSimulation::new(chain, cfg, opts)?;
    for _ in 0..cfg.horizon {
        sim.step();
    }
    Ok(sim.into_trace())
}

/// Runs one replication per seed (`seed_i = derive_seed(cfg.seed, i)`), in parallel.
pub fn run_replications(chain: &AugmentedChain, cfg: &CilConfig, replications: usize, opts: RunOptions) -> Result<Vec<PopulationTrace>> {
    use rayon::prelude::*;
    (0..replications)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = rng::derive_seed(cfg.seed, i as u64);
            run(chain, &c, opts)
        })
        .collect()
}
