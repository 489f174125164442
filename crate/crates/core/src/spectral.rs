//! Quasi-stationary distributions of the absorbing walk chain.
//!
//! `Q` is elementwise nonnegative and, on a robustly connected graph with
//! self-loops, primitive. Its leading left eigenpair is therefore reachable
//! by plain power iteration started from the uniform vector.

use serde::{Deserialize, Serialize};

use crate::adversary::AugmentedChain;
use crate::error::{Error, Result};
use crate::matrix::{l1_distance, normalize_l1, total_variation, DenseMatrix, TransitionMatrix};

pub const DEFAULT_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 2_000_000;

/// Steps between renormalizations in [`yaglom_oracle`].
pub const YAGLOM_RENORMALIZE_EVERY: usize = 25;

/// Iteration cap for the spectral-gap estimate inside [`qsd`].
pub const GAP_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsdResult {
    /// Leading eigenvalue of `Q`.
    pub alpha: f64,
    /// QSD over transient states (state order of the chain).
    pub nu: Vec<f64>,
    /// Node index of each entry of `nu`.
    pub transient: Vec<usize>,
    /// `nu` lifted to node space; zero on absorbing Pac-Man nodes.
    pub pi_chain: Vec<f64>,
    /// Row-normalized `Q`.
    pub p_chain: TransitionMatrix,
    /// `1 − |λ₂(p_chain)|`.
    pub spectral_gap: f64,
    pub iterations: usize,
    /// `‖νᵀQ − ανᵀ‖∞`.
    pub residual: f64,
}

/// Leading left eigenpair of `Q` plus the conditioned-walk matrix.
pub fn qsd(chain: &AugmentedChain, tol: f64, max_iters: usize) -> Result<QsdResult> {
    let q = chain.q_sub();
    let t = q.rows();
    if t == 0 {
        return Err(Error::invalid("chain has no transient states"));
    }
    let mut nu = vec![1.0 / t as f64; t];
    let mut next = vec![0.0; t];
    let mut alpha = 0.0;
    let mut diff = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        q.left_mul_into(&nu, &mut next);
        alpha = normalize_l1(&mut next);
        if !(alpha > 0.0) {
            return Err(Error::Singular("Q annihilated the iterate".into()));
        }
        diff = l1_distance(&next, &nu);
        std::mem::swap(&mut nu, &mut next);
        if diff < tol {
            break;
        }
    }
    if diff >= tol {
        return Err(Error::NonConvergence {
            iterations,
            residual: diff,
        });
    }
    let nq = q.left_mul(&nu);
    let residual = nq
        .iter()
        .zip(&nu)
        .map(|(a, b)| (a - alpha * b).abs())
        .fold(0.0, f64::max);

    let p_chain = row_normalize(q)?;
    let spectral_gap = spectral_gap(&p_chain, 1e-11, max_iters.min(GAP_MAX_ITERS));
    Ok(QsdResult {
        alpha,
        pi_chain: chain.embed(&nu),
        nu,
        transient: chain.transient_states().to_vec(),
        p_chain,
        spectral_gap,
        iterations,
        residual,
    })
}

/// `[P_chain]_uv = Q_uv / Σ_v Q_uv`.
pub fn row_normalize(q: &DenseMatrix) -> Result<TransitionMatrix> {
    let mut m = q.clone();
    for i in 0..m.rows() {
        let s = m.row_sum(i);
        if !(s > 0.0) {
            return Err(Error::Singular(format!("transient state {i} is absorbed with probability one")));
        }
        m.row_mut(i).iter_mut().for_each(|x| *x /= s);
        // Push the rounding residue onto the largest entry so the row sums to one.
        let resid = 1.0 - m.row_sum(i);
        let row = m.row_mut(i);
        let k = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap_or(0);
        row[k] += resid;
    }
    TransitionMatrix::new(m)
}

/// `1 − |λ₂|` by power iteration on the zero-sum subspace.
///
/// Row-stochastic `P` maps `{x : Σx = 0}` to itself and its restriction there
/// has spectral radius `|λ₂|`. The growth rate is read off two-step norm
/// ratios so that a `±|λ₂|` pair does not stall the estimate.
pub fn spectral_gap(p: &TransitionMatrix, tol: f64, max_iters: usize) -> f64 {
    let n = p.dim();
    if n <= 1 {
        return 1.0;
    }
    let mut x: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * 0.7548776662).sin() + 0.1 * i as f64).collect();
    project_zero_sum(&mut x);
    let norm0 = l2(&x);
    x.iter_mut().for_each(|v| *v /= norm0);
    let mut prev_rate = f64::NAN;
    for _ in 0..max_iters {
        let y = p.left_mul(&x);
        let mut z = p.left_mul(&y);
        project_zero_sum(&mut z);
        let nz = l2(&z);
        if nz < 1e-280 {
            return 1.0;
        }
        let rate = nz.sqrt();
        z.iter_mut().for_each(|v| *v /= nz);
        x = z;
        if rate < 1e-12 {
            return 1.0;
        }
        if (rate - prev_rate).abs() < tol {
            return 1.0 - rate;
        }
        prev_rate = rate;
    }
    1.0 - prev_rate
}

fn project_zero_sum(x: &mut [f64]) {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Survival-conditioned occupation `e_startᵀ Qᵗ / ‖e_startᵀ Qᵗ‖₁` over transient states.
///
/// Renormalizes every [`YAGLOM_RENORMALIZE_EVERY`] steps to avoid underflow;
/// the schedule is fixed so results are bit-reproducible.
pub fn yaglom_oracle(chain: &AugmentedChain, start: usize, t: usize) -> Result<Vec<f64>> {
    let s = chain
        .state_of(start)
        .ok_or_else(|| Error::invalid(format!("node {} is not transient", start + 1)))?;
    if t == 0 {
        return Err(Error::invalid("yaglom_oracle needs t >= 1"));
    }
    let q = chain.q_sub();
    let mut v = vec![0.0; q.rows()];
    v[s] = 1.0;
    let mut next = vec![0.0; q.rows()];
    for step in 1..=t {
        q.left_mul_into(&v, &mut next);
        std::mem::swap(&mut v, &mut next);
        if step % YAGLOM_RENORMALIZE_EVERY == 0 {
            normalize_l1(&mut v);
        }
    }
    if normalize_l1(&mut v) <= 0.0 {
        return Err(Error::Singular(format!("no survival mass after {t} steps")));
    }
    Ok(v)
}

/// Stationary distribution of a row-stochastic matrix by power iteration from uniform.
pub fn chain_stationary(p: &TransitionMatrix, tol: f64, max_iters: usize) -> Result<Vec<f64>> {
    let n = p.dim();
    let mut v = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut diff = f64::INFINITY;
    for iterations in 1..=max_iters {
        p.matrix().left_mul_into(&v, &mut next);
        normalize_l1(&mut next);
        diff = l1_distance(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if diff < tol {
            return Ok(v);
        }
        if iterations == max_iters {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: diff,
    })
}

/// TV distance between `ν` (node space) and `π`.
pub fn tv_to_target(result: &QsdResult, pi: &[f64]) -> f64 {
    total_variation(&result.pi_chain, pi)
}
