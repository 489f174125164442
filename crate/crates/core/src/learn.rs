//! RW-SGD payload on per-node quadratic objectives.
//!
//! Node `u` holds `f_u(x) = s‖H_u x − y_u‖²` with a common scale `s`
//! (`s = ½` for the textbook least-squares form, `s = 1` for squared error).
//! The global objective is `f = Σ_u π_u f_u`.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adversary::{AdversaryConfig, AugmentedChain};
use crate::engine::{CilConfig, CilSimulation, LocalUpdate, RunOptions, WalkChain, WalkToken};
use crate::error::{Error, Result};
use crate::graph::{metropolis_hastings, GraphSpec};
use crate::matrix::total_variation;
use crate::rng::{self, Stream};
use crate::spectral::QsdResult;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalQuadratic {
    pub h: DMatrix<f64>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnProblem {
    dim: usize,
    scale: f64,
    nodes: Vec<LocalQuadratic>,
    pi: Vec<f64>,
}

/// Parameters of a random synthetic instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub rows_per_node: usize,
    /// Spread of the per-node optima around a shared center.
    pub heterogeneity: f64,
    pub seed: u64,
}

impl LearnProblem {
    pub fn new(nodes: Vec<LocalQuadratic>, pi: Vec<f64>, scale: f64) -> Result<Self> {
        let dim = nodes.first().map(|q| q.h.ncols()).ok_or_else(|| Error::invalid("problem needs at least one node"))?;
        if dim == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        if nodes.iter().any(|q| q.h.ncols() != dim || q.h.nrows() != q.y.len()) {
            return Err(Error::invalid("inconsistent local problem shapes"));
        }
        if pi.len() != nodes.len() {
            return Err(Error::invalid(format!("π has {} entries for {} nodes", pi.len(), nodes.len())));
        }
        if !(scale > 0.0) {
            return Err(Error::invalid("loss scale must be positive"));
        }
        Ok(Self { dim, scale, nodes, pi })
    }

    /// Scalar instance `f_u(x) = s(x − target_u)²`.
    pub fn scalar(targets: &[f64], pi: Vec<f64>, scale: f64) -> Result<Self> {
        let nodes = targets
            .iter()
            .map(|&t| LocalQuadratic {
                h: DMatrix::from_element(1, 1, 1.0),
                y: DVector::from_element(1, t),
            })
            .collect();
        Self::new(nodes, pi, scale)
    }

    /// Gaussian design `H_u` with `rows_per_node` rows scaled by `1/√rows`,
    /// and `y_u = H_u (c + heterogeneity·δ_u)` for a shared center `c`.
    pub fn synthetic(spec: &SyntheticSpec, pi: Vec<f64>) -> Result<Self> {
        if spec.dim == 0 || spec.rows_per_node == 0 {
            return Err(Error::invalid("dimension and rows per node must be positive"));
        }
        let mut rng = rng::stream(spec.seed, Stream::Data);
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let center = DVector::from_fn(spec.dim, |_, _| normal(&mut rng));
        let w = 1.0 / (spec.rows_per_node as f64).sqrt();
        let nodes = (0..pi.len())
            .map(|_| {
                let h = DMatrix::from_fn(spec.rows_per_node, spec.dim, |_, _| w * normal(&mut rng));
                let shift = DVector::from_fn(spec.dim, |_, _| spec.heterogeneity * normal(&mut rng));
                let y = &h * (&center + shift);
                LocalQuadratic { h, y }
            })
            .collect();
        Self::new(nodes, pi, 0.5)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn nodes(&self) -> &[LocalQuadratic] {
        &self.nodes
    }

    pub fn initial_model(&self) -> Vec<f64> {
        vec![0.0; self.dim]
    }

    pub fn local_loss(&self, u: usize, x: &[f64]) -> f64 {
        let q = &self.nodes[u];
        let r = &q.h * DVector::from_column_slice(x) - &q.y;
        self.scale * r.norm_squared()
    }

    pub fn local_gradient(&self, u: usize, x: &[f64]) -> Vec<f64> {
        let q = &self.nodes[u];
        let r = &q.h * DVector::from_column_slice(x) - &q.y;
        (q.h.tr_mul(&r) * (2.0 * self.scale)).as_slice().to_vec()
    }

    pub fn weighted_loss(&self, x: &[f64], weights: &[f64]) -> f64 {
        weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(u, &w)| w * self.local_loss(u, x))
            .sum()
    }

    /// `f(x) = Σ π_u f_u(x)`.
    pub fn loss(&self, x: &[f64]) -> f64 {
        self.weighted_loss(x, &self.pi)
    }

    pub fn weighted_gradient(&self, x: &[f64], weights: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (u, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                for (gi, li) in g.iter_mut().zip(self.local_gradient(u, x)) {
                    *gi += w * li;
                }
            }
        }
        g
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.weighted_gradient(x, &self.pi)
    }

    /// `2s Σ w_u H_uᵀH_u`.
    pub fn weighted_hessian(&self, weights: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (q, &w) in self.nodes.iter().zip(weights) {
            if w > 0.0 {
                m += q.h.tr_mul(&q.h) * (2.0 * self.scale * w);
            }
        }
        m
    }

    /// Extreme eigenvalues `(μ, L)` of the π-weighted Hessian.
    pub fn curvature(&self) -> (f64, f64) {
        let eig = SymmetricEigen::new(self.weighted_hessian(&self.pi)).eigenvalues;
        let mu = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let lip = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mu, lip)
    }
}

/// Minimizer of `Σ w_u f_u` by a Cholesky solve of the normal equations.
pub fn solve_weighted_optimum(problem: &LearnProblem, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != problem.node_count() {
        return Err(Error::invalid("weight vector length does not match the node count"));
    }
    let a = problem.weighted_hessian(weights);
    let mut b = DVector::zeros(problem.dim);
    for (q, &w) in problem.nodes.iter().zip(weights) {
        if w > 0.0 {
            b += q.h.tr_mul(&q.y) * (2.0 * problem.scale * w);
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("weighted Hessian is not positive definite".into()))?;
    Ok(chol.solve(&b).as_slice().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `γ_k = γ0 / (1 + k/τ)`.
    Diminishing { gamma0: f64, tau: f64 },
    Constant { eta: f64 },
}

impl StepSchedule {
    /// Step size for the walk's `k`-th local update (0-based).
    pub fn step(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::Diminishing { gamma0, tau } => gamma0 / (1.0 + k as f64 / tau),
            StepSchedule::Constant { eta } => eta,
        }
    }

    pub fn validate(&self, problem: &LearnProblem) -> Result<()> {
        match *self {
            StepSchedule::Diminishing { gamma0, tau } => {
                if !(gamma0 >= 0.0 && tau > 0.0) {
                    return Err(Error::invalid("diminishing schedule needs γ0 ≥ 0 and τ > 0"));
                }
            }
            StepSchedule::Constant { eta } => {
                let (_, lip) = problem.curvature();
                if !(eta > 0.0 && eta < 1.0 / lip) {
                    return Err(Error::invalid(format!("constant step {eta} must lie in (0, 1/L) with L = {lip}")));
                }
            }
        }
        Ok(())
    }
}

/// Gradient-step payload for the CIL engine.
#[derive(Debug, Clone, Copy)]
pub struct SgdPayload<'a> {
    pub problem: &'a LearnProblem,
    pub schedule: StepSchedule,
}

impl LocalUpdate for SgdPayload<'_> {
    fn initial_model(&self) -> Vec<f64> {
        self.problem.initial_model()
    }

    fn update(&self, model: &mut [f64], node: usize, local_iteration: u64) {
        let g = self.problem.local_gradient(node, model);
        let step = self.schedule.step(local_iteration);
        for (x, gi) in model.iter_mut().zip(g) {
            *x -= step * gi;
        }
    }
}

/// One RW-SGD step of `token` at `node`.
pub fn sgd_update(token: &mut WalkToken, node: usize, problem: &LearnProblem, schedule: &StepSchedule) {
    let payload = SgdPayload {
        problem,
        schedule: *schedule,
    };
    payload.update(&mut token.model, node, token.local_iteration_count);
    token.local_iteration_count += 1;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimaReport {
    pub x_star: Vec<f64>,
    pub x_tilde_star: Vec<f64>,
    pub deviation: f64,
    /// `‖∇f(x̃*)‖`.
    pub gradient_norm: f64,
    pub mu: f64,
    pub lip: f64,
    pub sigma2: f64,
    pub spectral_gap: f64,
    /// `‖ν̃ − π‖_TV`.
    pub tv: f64,
    /// `(1/L)‖∇f(x̃*)‖`.
    pub lower_bound: f64,
    /// `(1/μ)‖∇f(x̃*)‖`.
    pub upper_bound: f64,
    /// `(2/μ)‖∇f(x̃*)‖`.
    pub upper_bound_loose: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    pub upper_loose_holds: bool,
    /// `ηLσ²/(γ μ²) + TV²σ²L/μ³`, present for constant steps.
    pub constant_step_bound: Option<f64>,
}

/// Relative slack for the sandwich comparisons.
const SANDWICH_RTOL: f64 = 1e-9;

pub fn optima_report(problem: &LearnProblem, qsd: &QsdResult, schedule: &StepSchedule) -> Result<OptimaReport> {
    let pi = problem.pi();
    if qsd.pi_chain.len() != pi.len() {
        return Err(Error::invalid("QSD and problem have different node counts"));
    }
    let x_star = solve_weighted_optimum(problem, pi)?;
    let x_tilde_star = solve_weighted_optimum(problem, &qsd.pi_chain)?;
    let deviation = norm(&sub(&x_tilde_star, &x_star));
    let gradient_norm = norm(&problem.gradient(&x_tilde_star));
    let (mu, lip) = problem.curvature();
    let sigma2 = (0..problem.node_count())
        .map(|u| norm(&problem.local_gradient(u, &x_star)).powi(2))
        .fold(0.0, f64::max);
    let tv = total_variation(&qsd.pi_chain, pi);
    let lower_bound = gradient_norm / lip;
    let upper_bound = gradient_norm / mu;
    let upper_bound_loose = 2.0 * gradient_norm / mu;
    // Rounding floor of the two solves; matters when ν = π and x̃* = x*.
    let floor = 64.0 * f64::EPSILON * (lip / mu) * (1.0 + norm(&x_star));
    let slack = (SANDWICH_RTOL * deviation).max(floor);
    let constant_step_bound = match *schedule {
        StepSchedule::Constant { eta } => {
            Some(eta * lip * sigma2 / (qsd.spectral_gap * mu * mu) + tv * tv * sigma2 * lip / mu.powi(3))
        }
        StepSchedule::Diminishing { .. } => None,
    };
    Ok(OptimaReport {
        deviation,
        gradient_norm,
        mu,
        lip,
        sigma2,
        spectral_gap: qsd.spectral_gap,
        tv,
        lower_holds: lower_bound <= deviation + slack,
        upper_holds: deviation <= upper_bound + slack,
        upper_loose_holds: deviation <= upper_bound_loose + slack,
        lower_bound,
        upper_bound,
        upper_bound_loose,
        constant_step_bound,
        x_star,
        x_tilde_star,
    })
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Global loss of a chain's model at the end of one slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub t: u64,
    pub iter: u64,
    pub loss: f64,
    /// Active member, `None` while the chain waits.
    pub walk: Option<u64>,
}

/// Replays the run that produced `walk_chain` with an SGD payload and
/// records `f` at the chain's current model after every slot. The payload
/// draws no randomness, so the replay follows the original sample path.
pub fn chain_loss_trace(
    chain: &AugmentedChain,
    cfg: &CilConfig,
    problem: &LearnProblem,
    schedule: &StepSchedule,
    walk_chain: &WalkChain,
) -> Result<Vec<LossPoint>> {
    let payload = SgdPayload {
        problem,
        schedule: *schedule,
    };
    let mut sim = CilSimulation::with_payload(chain, cfg, RunOptions::counts_only(), &payload)?;
    let mut model = problem.initial_model();
    let mut out = Vec::with_capacity(cfg.horizon as usize);
    for t in 0..cfg.horizon {
        sim.step();
        let walk = walk_chain.active_at(t);
        if let Some(id) = walk {
            let tok = sim
                .tokens()
                .iter()
                .find(|tok| tok.walk_id == id)
                .ok_or_else(|| Error::invalid(format!("walk {id} is not alive at slot {t}; chain belongs to another run")))?;
            model.clone_from(&tok.model);
        }
        out.push(LossPoint {
            t,
            iter: walk_chain.iter.get(t as usize).copied().unwrap_or(0),
            loss: problem.loss(&model),
            walk,
        });
    }
    Ok(out)
}

/// CSV with columns `t,iter,loss,chain_id`.
pub fn write_loss_csv<W: Write>(points: &[LossPoint], mut w: W) -> io::Result<()> {
    writeln!(w, "t,iter,loss,chain_id")?;
    for p in points {
        match p.walk {
            Some(id) => writeln!(w, "{},{},{:?},{}", p.t, p.iter, p.loss, id)?,
            None => writeln!(w, "{},{},{:?},", p.t, p.iter, p.loss)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GossipTrace {
    /// Mean of `f(x_u)` over benign nodes, per step.
    pub loss: Vec<f64>,
    /// Mean of `‖x_u − x̄‖²` over benign nodes, per step.
    pub consensus: Vec<f64>,
}

/// Synchronous gossip SGD: each benign node takes a local gradient step and
/// then averages its neighborhood with the Metropolis–Hastings weights. A
/// Pac-Man node does no computation, still sends its model, and drops each
/// incoming message with its ζ.
pub fn run_gossip_baseline(
    graph: &GraphSpec,
    adversary: Option<&AdversaryConfig>,
    problem: &LearnProblem,
    schedule: &StepSchedule,
    steps: u64,
    seed: u64,
) -> Result<GossipTrace> {
    let n = graph.node_count();
    if problem.node_count() != n {
        return Err(Error::invalid("problem and graph have different node counts"));
    }
    let zeta = match adversary {
        Some(a) => {
            a.validate_for(n)?;
            a.zeta_table(n)
        }
        None => vec![None; n],
    };
    let p = metropolis_hastings(graph);
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|u| p.row(u).iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(v, &x)| (v, x)).collect())
        .collect();
    let benign: Vec<usize> = (0..n).filter(|&u| zeta[u].is_none()).collect();
    let mut rng = rng::stream(seed, Stream::Gossip);
    let m = problem.dim();
    let mut x = vec![problem.initial_model(); n];
    let mut sent = x.clone();
    let mut trace = GossipTrace::default();

    for k in 0..steps {
        let step = schedule.step(k);
        for u in 0..n {
            sent[u].clone_from(&x[u]);
            if zeta[u].is_none() {
                let g = problem.local_gradient(u, &x[u]);
                for (xi, gi) in sent[u].iter_mut().zip(g) {
                    *xi -= step * gi;
                }
            }
        }
        for u in 0..n {
            let mut acc = vec![0.0; m];
            let mut weight = 0.0;
            for &(v, w) in &rows[u] {
                if v != u {
                    if let Some(z) = zeta[u] {
                        if z >= 1.0 || rng.gen::<f64>() < z {
                            continue;
                        }
                    }
                }
                weight += w;
                for (a, s) in acc.iter_mut().zip(&sent[v]) {
                    *a += w * s;
                }
            }
            acc.iter_mut().for_each(|a| *a /= weight);
            x[u] = acc;
        }
        let mut mean = vec![0.0; m];
        for &u in &benign {
            for (a, xi) in mean.iter_mut().zip(&x[u]) {
                *a += xi / benign.len() as f64;
            }
        }
        let b = benign.len() as f64;
        trace.loss.push(benign.iter().map(|&u| problem.loss(&x[u])).sum::<f64>() / b);
        trace
            .consensus
            .push(benign.iter().map(|&u| norm(&sub(&x[u], &mean)).powi(2)).sum::<f64>() / b);
    }
    Ok(trace)
}
