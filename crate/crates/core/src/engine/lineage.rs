use rand::Rng;

use super::trace::PopulationTrace;
use crate::error::{Error, Result};

/// Slots `[start, end)` during which `walk` is the active member of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainSegment {
    pub walk: u64,
    pub start: u64,
    pub end: u64,
}

/// A parent→child lineage and its cumulative local-update count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkChain {
    pub members: Vec<u64>,
    pub segments: Vec<ChainSegment>,
    /// `iter[t]` counts the chain's local updates in slots `0..=t`.
    pub iter: Vec<u64>,
    /// True when the last member is alive at the horizon.
    pub survives: bool,
}

impl WalkChain {
    /// Member whose segment covers slot `t`; `None` while the chain waits
    /// for a child or after it has ended.
    pub fn active_at(&self, t: u64) -> Option<u64> {
        self.segments.iter().find(|s| s.start <= t && t < s.end).map(|s| s.walk)
    }

    pub fn total_iterations(&self) -> u64 {
        self.iter.last().copied().unwrap_or(0)
    }
}

fn children_of(trace: &PopulationTrace) -> Vec<Vec<u64>> {
    let mut children = vec![Vec::new(); trace.walks.len()];
    for w in &trace.walks {
        if let Some(p) = w.parent {
            children[p as usize].push(w.id);
        }
    }
    children
}

fn check_lineage(trace: &PopulationTrace, initial_walk: u64) -> Result<()> {
    if trace.walks.is_empty() {
        return Err(Error::invalid("trace was recorded without lineage"));
    }
    if initial_walk as usize >= trace.walks.len() {
        return Err(Error::invalid(format!("unknown walk id {initial_walk}")));
    }
    Ok(())
}

/// Follows a chain from `initial_walk`, picking a uniform child at each step.
pub fn extract_chain<R: Rng>(trace: &PopulationTrace, initial_walk: u64, rng: &mut R) -> Result<WalkChain> {
    check_lineage(trace, initial_walk)?;
    let children = children_of(trace);
    let mut members = vec![initial_walk];
    let mut cur = initial_walk as usize;
    while !children[cur].is_empty() {
        let c = &children[cur];
        cur = c[rng.gen_range(0..c.len())] as usize;
        members.push(cur as u64);
    }
    Ok(build(trace, members))
}

/// Like [`extract_chain`] but restricted, at every step, to children whose
/// subtree still has a live walk at the horizon. Fails if no such chain
/// starts at `initial_walk`.
pub fn extract_surviving_chain<R: Rng>(trace: &PopulationTrace, initial_walk: u64, rng: &mut R) -> Result<WalkChain> {
    check_lineage(trace, initial_walk)?;
    let children = children_of(trace);
    // Children always have larger ids than their parents.
    let mut alive = vec![false; trace.walks.len()];
    for id in (0..trace.walks.len()).rev() {
        alive[id] = trace.walks[id].death.is_none() || children[id].iter().any(|&c| alive[c as usize]);
    }
    if !alive[initial_walk as usize] {
        return Err(Error::invalid(format!("no lineage of walk {initial_walk} survives to the horizon")));
    }
    let mut members = vec![initial_walk];
    let mut cur = initial_walk as usize;
    while trace.walks[cur].death.is_some() {
        let live: Vec<u64> = children[cur].iter().copied().filter(|&c| alive[c as usize]).collect();
        cur = live[rng.gen_range(0..live.len())] as usize;
        members.push(cur as u64);
    }
    Ok(build(trace, members))
}

fn build(trace: &PopulationTrace, members: Vec<u64>) -> WalkChain {
    let horizon = trace.horizon();
    let mut segments = Vec::with_capacity(members.len());
    let mut prev_end = 0;
    for &m in &members {
        let w = &trace.walks[m as usize];
        let start = w.birth.max(prev_end);
        let end = w.death.unwrap_or(horizon).max(start);
        segments.push(ChainSegment { walk: m, start, end });
        prev_end = end;
    }
    let survives = members.last().map(|&m| trace.walks[m as usize].death.is_none()).unwrap_or(false);

    let mut computed = vec![false; horizon as usize];
    for s in &segments {
        for t in s.start..s.end {
            computed[t as usize] = true;
        }
        for &t in &trace.walks[s.walk as usize].pacman_slots {
            if t >= s.start && t < s.end {
                computed[t as usize] = false;
            }
        }
    }
    let mut acc = 0;
    let iter = computed
        .iter()
        .map(|&c| {
            acc += u64::from(c);
            acc
        })
        .collect();
    WalkChain {
        members,
        segments,
        iter,
        survives,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::trace::WalkRecord;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rec(id: u64, parent: Option<u64>, birth: u64, death: Option<u64>) -> WalkRecord {
        WalkRecord {
            id,
            parent,
            birth,
            death,
            birth_node: 1,
            pacman_slots: Vec::new(),
        }
    }

    fn trace(walks: Vec<WalkRecord>, horizon: usize) -> PopulationTrace {
        PopulationTrace {
            z: vec![0; horizon],
            creations: vec![0; horizon],
            terminations: vec![0; horizon],
            walks,
            initial_walks: vec![0],
            ..Default::default()
        }
    }

    #[test]
    fn childless_walk_is_constant_after_death() {
        let tr = trace(vec![rec(0, None, 0, Some(4))], 10);
        let ch = extract_chain(&tr, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ch.members, vec![0]);
        assert_eq!(ch.iter, vec![1, 2, 3, 4, 4, 4, 4, 4, 4, 4]);
        assert!(!ch.survives);
    }

    #[test]
    fn single_child_extends_chain_with_idle_gap() {
        let tr = trace(vec![rec(0, None, 0, Some(3)), rec(1, Some(0), 6, None)], 10);
        let ch = extract_chain(&tr, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ch.members, vec![0, 1]);
        assert_eq!(ch.iter, vec![1, 2, 3, 3, 3, 3, 4, 5, 6, 7]);
        assert_eq!(ch.active_at(4), None);
        assert_eq!(ch.active_at(7), Some(1));
        assert!(ch.survives);
    }

    #[test]
    fn child_born_before_parent_death_waits_for_it() {
        let tr = trace(vec![rec(0, None, 0, Some(5)), rec(1, Some(0), 2, None)], 8);
        let ch = extract_chain(&tr, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ch.segments[1], ChainSegment { walk: 1, start: 5, end: 8 });
        assert_eq!(ch.total_iterations(), 8);
    }

    #[test]
    fn pacman_slots_are_idle() {
        let mut w = rec(0, None, 0, Some(5));
        w.pacman_slots = vec![2, 3];
        let tr = trace(vec![w], 6);
        let ch = extract_chain(&tr, 0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(ch.iter, vec![1, 2, 2, 2, 3, 3]);
    }

    #[test]
    fn surviving_chain_avoids_dead_branches() {
        let tr = trace(
            vec![
                rec(0, None, 0, Some(2)),
                rec(1, Some(0), 3, Some(4)),
                rec(2, Some(0), 3, Some(6)),
                rec(3, Some(2), 7, None),
            ],
            10,
        );
        for seed in 0..20 {
            let ch = extract_surviving_chain(&tr, 0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(ch.members, vec![0, 2, 3]);
        }
        let dead = trace(vec![rec(0, None, 0, Some(2))], 5);
        assert!(extract_surviving_chain(&dead, 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
