use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

/// What happened to a walk in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Created,
    Terminated,
    /// Several walks met at a node and the cache kept this one.
    MergedCache,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub kind: EventKind,
    pub walk: u64,
    /// 1-based node label.
    pub node: usize,
}

/// Life record of one walk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub id: u64,
    pub parent: Option<u64>,
    pub birth: u64,
    /// Slot in which the walk was terminated.
    pub death: Option<u64>,
    pub birth_node: usize,
    /// Slots the walk spent alive on a Pac-Man node (no local update there).
    pub pacman_slots: Vec<u64>,
}

/// Maximal run of slots with `Z_t = 0`, as `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtinctionInterval {
    pub start: u64,
    pub end: u64,
    /// False when the run reaches the end of the horizon.
    pub recovered: bool,
}

impl ExtinctionInterval {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Per-slot population record of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrace {
    pub z: Vec<u32>,
    pub creations: Vec<u32>,
    pub terminations: Vec<u32>,
    pub events: Vec<Event>,
    /// Indexed by walk id; empty when lineage recording is off.
    pub walks: Vec<WalkRecord>,
    pub initial_walks: Vec<u64>,
    /// Cumulative local-update count of a designated chain, per slot.
    pub chain_iterations: Option<Vec<u64>>,
}

impl PopulationTrace {
    pub fn horizon(&self) -> u64 {
        self.z.len() as u64
    }

    pub fn peak(&self) -> u32 {
        self.z.iter().copied().max().unwrap_or(0)
    }

    pub fn total_creations(&self) -> u64 {
        self.creations.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn extinction_intervals(&self) -> Vec<ExtinctionInterval> {
        let mut out = Vec::new();
        let mut start = None;
        for (t, &z) in self.z.iter().enumerate() {
            match (z, start) {
                (0, None) => start = Some(t as u64),
                (z, Some(s)) if z > 0 => {
                    out.push(ExtinctionInterval {
                        start: s,
                        end: t as u64,
                        recovered: true,
                    });
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push(ExtinctionInterval {
                start: s,
                end: self.horizon(),
                recovered: false,
            });
        }
        out
    }

    /// Histogram of extinction-interval lengths as `(length, count)`, ascending.
    pub fn extinction_histogram(&self) -> Vec<(u64, usize)> {
        let mut map = std::collections::BTreeMap::new();
        for iv in self.extinction_intervals() {
            *map.entry(iv.len()).or_insert(0) += 1;
        }
        map.into_iter().collect()
    }

    /// CSV with columns `t,Z_t,creations,terminations,iter_t`; `iter_t` is
    /// blank when no chain is attached.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,Z_t,creations,terminations,iter_t")?;
        let mut line = String::with_capacity(48);
        for t in 0..self.z.len() {
            line.clear();
            let _ = write!(line, "{},{},{},{},", t, self.z[t], self.creations[t], self.terminations[t]);
            if let Some(it) = &self.chain_iterations {
                let _ = write!(line, "{}", it[t]);
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// One JSON object per line: `{"t":..,"kind":..,"walk":..,"node":..}`.
    pub fn write_events_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }

    /// Checks `Z_t = Z_{t−1} + creations(t) − terminations(t)` for every slot.
    pub fn accounting_holds(&self, z0: u32) -> bool {
        let mut prev = z0;
        for t in 0..self.z.len() {
            let expect = i64::from(prev) + i64::from(self.creations[t]) - i64::from(self.terminations[t]);
            if expect != i64::from(self.z[t]) {
                return false;
            }
            prev = self.z[t];
        }
        true
    }
}
