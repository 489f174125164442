use rand::Rng;
use serde::{Deserialize, Serialize};

use super::trace::PopulationTrace;
use super::{initial_positions, CilConfig, RowSampler};
use crate::adversary::AugmentedChain;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// How node clocks behave while the single walk is dead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdleModel {
    /// At the death slot `D` every benign clock is reset to `D − 1`, so the
    /// first creation trial happens exactly `A` slots later.
    #[default]
    WorstCase,
    /// Clocks keep their real last-visit times.
    Tracked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DominatedOptions {
    pub idle: IdleModel,
    /// Keep the per-slot `Z_t` and iteration series.
    pub record_series: bool,
}

/// One life-and-wait cycle, from a birth to the next birth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenewalCycle {
    pub birth: u64,
    pub death: u64,
    /// First slot with a creation trial.
    pub first_trial: u64,
    pub next_birth: u64,
    /// Local updates made during the lifetime.
    pub iterations: u64,
}

impl RenewalCycle {
    /// Lifetime `T1`.
    pub fn lifetime(&self) -> u64 {
        self.death - self.birth
    }

    /// Threshold wait `T2`; `−1` when a trial happens in the death slot itself.
    pub fn threshold_wait(&self) -> i64 {
        self.first_trial as i64 - self.death as i64 - 1
    }

    /// Creation delay `T3`.
    pub fn creation_delay(&self) -> u64 {
        self.next_birth - self.first_trial + 1
    }

    pub fn length(&self) -> u64 {
        self.next_birth - self.birth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominatedRun {
    pub cycles: Vec<RenewalCycle>,
    pub total_iterations: u64,
    pub horizon: u64,
    /// `z` in {0,1} and `chain_iterations`, when series were recorded.
    pub trace: PopulationTrace,
}

impl DominatedRun {
    /// Renewal-reward rate: updates per slot over complete cycles.
    pub fn renewal_rate(&self) -> f64 {
        let it: u64 = self.cycles.iter().map(|c| c.iterations).sum();
        let len: u64 = self.cycles.iter().map(|c| c.length()).sum();
        if len == 0 {
            return f64::NAN;
        }
        it as f64 / len as f64
    }

    pub fn mean_lifetime(&self) -> f64 {
        mean(self.cycles.iter().map(|c| c.lifetime() as f64))
    }

    pub fn mean_threshold_wait(&self) -> f64 {
        mean(self.cycles.iter().map(|c| c.threshold_wait() as f64))
    }

    pub fn mean_creation_delay(&self) -> f64 {
        mean(self.cycles.iter().map(|c| c.creation_delay() as f64))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Renewal lower bound `(N/ζ) / ((N/ζ) + A − 1 + 1/q)`.
pub fn renewal_lower_bound(n: usize, zeta: f64, a: u64, q: f64) -> f64 {
    let life = n as f64 / zeta;
    life / (life + a as f64 - 1.0 + 1.0 / q)
}

/// Single-walk process in which creations are suppressed while a walk lives.
pub fn run_dominated_single(chain: &AugmentedChain, cfg: &CilConfig, opts: DominatedOptions) -> Result<DominatedRun> {
    cfg.validate(chain)?;
    let a = match &cfg.thresholds {
        super::Thresholds::Uniform(a) => *a,
        super::Thresholds::PerNode(_) => return Err(Error::invalid("the dominated process needs a uniform threshold")),
    };
    let n = chain.node_count();
    let benign = chain.benign_nodes();
    let zeta = chain.adversary().zeta_table(n);
    let sampler = RowSampler::new(chain.base());
    let q = cfg.creation_probability;

    let mut movement = rng::stream(cfg.seed, Stream::Movement);
    let mut termination = rng::stream(cfg.seed, Stream::Termination);
    let mut creation = rng::stream(cfg.seed, Stream::Creation);
    let mut placement = rng::stream(cfg.seed, Stream::Placement);

    let mut pos = Some(initial_positions(&cfg.placement, 1, &benign, &mut placement)[0]);
    let mut last_visit = vec![0u64; n];
    let mut birth = 0u64;
    let mut death = 0u64;
    let mut first_trial: Option<u64> = None;
    let mut life_iters = 0u64;
    let mut total = 0u64;
    let mut cycles = Vec::new();
    let mut trace = PopulationTrace::default();
    let mut iter_series = Vec::new();
    let mut late = Vec::with_capacity(benign.len());

    for t in 0..cfg.horizon {
        let mut created = 0;
        let mut terminated = 0;
        if let Some(u) = pos {
            if let Some(z) = zeta[u] {
                if z >= 1.0 || termination.gen::<f64>() < z {
                    pos = None;
                    death = t;
                    terminated = 1;
                    if opts.idle == IdleModel::WorstCase {
                        for &v in &benign {
                            last_visit[v] = t.saturating_sub(1);
                        }
                    }
                }
            }
        }
        match pos {
            Some(u) if zeta[u].is_none() => last_visit[u] = t,
            Some(_) => {}
            None => {
                late.clear();
                late.extend(benign.iter().copied().filter(|&v| t - last_visit[v] > a));
                if !late.is_empty() {
                    let trial = *first_trial.get_or_insert(t);
                    if q >= 1.0 || creation.gen::<f64>() < q {
                        let v = late[creation.gen_range(0..late.len())];
                        last_visit[v] = t;
                        pos = Some(v);
                        created = 1;
                        cycles.push(RenewalCycle {
                            birth,
                            death,
                            first_trial: trial,
                            next_birth: t,
                            iterations: life_iters,
                        });
                        birth = t;
                        life_iters = 0;
                        first_trial = None;
                    }
                }
            }
        }
        if let Some(u) = pos {
            if zeta[u].is_none() {
                life_iters += 1;
                total += 1;
            }
            pos = Some(sampler.sample(u, &mut movement));
        }
        if opts.record_series {
            trace.z.push(u32::from(pos.is_some()));
            trace.creations.push(created);
            trace.terminations.push(terminated);
            iter_series.push(total);
        }
    }
    if opts.record_series {
        trace.chain_iterations = Some(iter_series);
    }
    Ok(DominatedRun {
        cycles,
        total_iterations: total,
        horizon: cfg.horizon,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::{augment, AdversaryConfig};
    use crate::graph::{generate_topology, metropolis_hastings, GraphSpec, Topology};

    fn complete(n: usize, zeta: f64) -> AugmentedChain {
        let g = generate_topology(Topology::Complete, n, 0).unwrap();
        augment(&metropolis_hastings(&g), &AdversaryConfig::single(zeta).unwrap()).unwrap()
    }

    #[test]
    fn lifetime_mean_is_n_over_zeta() {
        let ch = complete(20, 1.0);
        let run = run_dominated_single(&ch, &CilConfig::uniform(5, 1.0, 1, 400_000, 1), DominatedOptions::default()).unwrap();
        assert!(run.cycles.len() > 10_000);
        assert!((run.mean_lifetime() - 20.0).abs() < 0.6, "{}", run.mean_lifetime());
        assert!(run.cycles.iter().all(|c| c.creation_delay() == 1 && c.threshold_wait() == 4));
    }

    #[test]
    fn renewal_rate_matches_formula() {
        let ch = complete(20, 1.0);
        let run = run_dominated_single(&ch, &CilConfig::uniform(10, 0.5, 1, 600_000, 2), DominatedOptions::default()).unwrap();
        let lb = renewal_lower_bound(20, 1.0, 10, 0.5);
        assert!((run.renewal_rate() / lb - 1.0).abs() < 0.02, "{} vs {lb}", run.renewal_rate());
        assert!((run.mean_creation_delay() - 2.0).abs() < 0.1);
    }

    #[test]
    fn threshold_one_waits_zero() {
        let ch = complete(10, 1.0);
        let run = run_dominated_single(&ch, &CilConfig::uniform(1, 1.0, 1, 50_000, 3), DominatedOptions::default()).unwrap();
        assert!(run.cycles.iter().all(|c| c.threshold_wait() == 0));
        let tracked = run_dominated_single(
            &ch,
            &CilConfig::uniform(1, 1.0, 1, 50_000, 3),
            DominatedOptions {
                idle: IdleModel::Tracked,
                record_series: false,
            },
        )
        .unwrap();
        assert!(tracked.cycles.iter().all(|c| c.threshold_wait() <= 0));
    }

    #[test]
    fn single_benign_node_keeps_at_most_one_walk() {
        let g = GraphSpec::with_uniform_target(2, [(0, 1)]).unwrap();
        let ch = augment(&metropolis_hastings(&g), &AdversaryConfig::single(1.0).unwrap()).unwrap();
        let run = run_dominated_single(
            &ch,
            &CilConfig::uniform(1, 1.0, 1, 2_000, 0),
            DominatedOptions {
                idle: IdleModel::Tracked,
                record_series: true,
            },
        )
        .unwrap();
        assert!(run.trace.z.iter().all(|&z| z <= 1));
        assert!(run.trace.accounting_holds(1));
    }
}
