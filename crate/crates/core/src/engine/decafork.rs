use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::PopulationTrace;
use super::{initial_positions, Placement, RowSampler};
use crate::adversary::AugmentedChain;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Duplication baseline driven by return-time estimates.
///
/// A benign node keeps its last `window` inter-visit gaps and estimates the
/// population as `(1/π_u) / mean_gap`. When a walk visits and the estimate is
/// below `target_count`, the node duplicates it with probability
/// `min(1, epsilon · (target_count − estimate))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecaforkConfig {
    pub epsilon: f64,
    pub target_count: f64,
    pub window: usize,
    pub initial_walks: usize,
    pub placement: Placement,
    pub horizon: u64,
    pub seed: u64,
}

impl DecaforkConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be a finite nonnegative number"));
        }
        if !(self.target_count > 0.0) {
            return Err(Error::invalid("target count must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("gap window must be at least 1"));
        }
        Ok(())
    }
}

pub fn run_decafork_baseline(chain: &AugmentedChain, pi: &[f64], cfg: &DecaforkConfig) -> Result<PopulationTrace> {
    cfg.validate()?;
    let n = chain.node_count();
    if pi.len() != n {
        return Err(Error::invalid(format!("target distribution has {} entries, expected {n}", pi.len())));
    }
    let benign = chain.benign_nodes();
    let zeta = chain.adversary().zeta_table(n);
    let sampler = RowSampler::new(chain.base());
    let mut movement = rng::stream(cfg.seed, Stream::Movement);
    let mut termination = rng::stream(cfg.seed, Stream::Termination);
    let mut duplication = rng::stream(cfg.seed, Stream::Duplication);
    let mut placement = rng::stream(cfg.seed, Stream::Placement);

    let mut walks = initial_positions(&cfg.placement, cfg.initial_walks, &benign, &mut placement);
    let mut last_visit: Vec<Option<u64>> = vec![None; n];
    let mut gaps: Vec<VecDeque<u64>> = vec![VecDeque::with_capacity(cfg.window); n];
    let mut visited_at = vec![u64::MAX; n];
    let mut trace = PopulationTrace::default();

    for t in 0..cfg.horizon {
        let before = walks.len();
        walks.retain(|&u| match zeta[u] {
            Some(z) => !(z >= 1.0 || termination.gen::<f64>() < z),
            None => true,
        });
        let terminations = (before - walks.len()) as u32;

        let mut creations = 0u32;
        for i in 0..walks.len() {
            let u = walks[i];
            if zeta[u].is_some() || visited_at[u] == t {
                continue;
            }
            visited_at[u] = t;
            if let Some(prev) = last_visit[u] {
                let g = &mut gaps[u];
                if g.len() == cfg.window {
                    g.pop_front();
                }
                g.push_back(t - prev);
            }
            last_visit[u] = Some(t);
            let g = &gaps[u];
            if g.is_empty() {
                continue;
            }
            let mean_gap = g.iter().sum::<u64>() as f64 / g.len() as f64;
            let estimate = (1.0 / pi[u]) / mean_gap;
            let p = (cfg.epsilon * (cfg.target_count - estimate).max(0.0)).min(1.0);
            if p > 0.0 && duplication.gen::<f64>() < p {
                walks.push(u);
                creations += 1;
            }
        }

        for u in walks.iter_mut() {
            *u = sampler.sample(*u, &mut movement);
        }
        trace.z.push(walks.len() as u32);
        trace.creations.push(creations);
        trace.terminations.push(terminations);
    }
    Ok(trace)
}
