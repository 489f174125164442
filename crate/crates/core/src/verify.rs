//! Empirical checks of the population and iteration-rate guarantees.
//!
//! Every check returns a [`BoundReport`]; statistical slack uses
//! normal-approximation standard errors.

use serde::{Deserialize, Serialize};

use crate::adversary::HittingConstants;
use crate::engine::{renewal_lower_bound, DominatedRun, PopulationTrace, WalkChain};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub theoretical: f64,
    pub empirical: f64,
    pub pass: bool,
    pub tolerance: f64,
    pub detail: String,
}

impl BoundReport {
    fn new(name: &str, theoretical: f64, empirical: f64, pass: bool, tolerance: f64, detail: String) -> Self {
        Self {
            name: name.to_string(),
            theoretical,
            empirical,
            pass,
            tolerance,
            detail,
        }
    }
}

/// Foster–Lyapunov constants of the population process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftConstants {
    pub d: usize,
    pub c: f64,
    pub n: usize,
    pub zeta: f64,
    pub epsilon: f64,
    /// `((N−1)d + ε)/(cζ)`.
    pub big_b: f64,
    /// `(1−cζ)B + (N−1)d`.
    pub small_b: f64,
}

pub const DEFAULT_DRIFT_EPSILON: f64 = 1.0;

impl DriftConstants {
    pub fn new(d: usize, c: f64, n: usize, zeta: f64, epsilon: f64) -> Result<Self> {
        if d < 1 || !(c > 0.0 && c <= 1.0) || !(zeta > 0.0 && zeta <= 1.0) || !(epsilon > 0.0) || n < 2 {
            return Err(Error::invalid("drift constants need d ≥ 1, c, ζ ∈ (0,1], ε > 0, N ≥ 2"));
        }
        let nd = (n - 1) as f64 * d as f64;
        let big_b = (nd + epsilon) / (c * zeta);
        let small_b = (1.0 - c * zeta) * big_b + nd;
        Ok(Self {
            d,
            c,
            n,
            zeta,
            epsilon,
            big_b,
            small_b,
        })
    }

    pub fn from_hitting(h: &HittingConstants, n: usize, zeta: f64, epsilon: f64) -> Result<Self> {
        Self::new(h.d, h.c, n, zeta, epsilon)
    }

    /// `−cζz + (N−1)d`.
    pub fn drift_bound(&self, z: f64) -> f64 {
        -self.c * self.zeta * z + (self.n - 1) as f64 * self.d as f64
    }
}

/// Empirical `d`-step drift for one value of `Z_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftBin {
    pub z: u32,
    pub samples: usize,
    pub mean: f64,
    pub std_error: f64,
    pub bound: f64,
}

/// Bins `Z_{t+d} − Z_t` by `Z_t` across all traces and compares each bin
/// with `−cζz + (N−1)d` plus three standard errors. Bins with fewer than
/// `min_samples` samples are skipped.
pub fn check_drift(traces: &[PopulationTrace], consts: &DriftConstants, min_samples: usize) -> (BoundReport, Vec<DriftBin>) {
    let d = consts.d;
    let mut acc: std::collections::BTreeMap<u32, (usize, f64, f64)> = Default::default();
    for tr in traces {
        for t in 0..tr.z.len().saturating_sub(d) {
            let z = tr.z[t];
            let delta = f64::from(tr.z[t + d]) - f64::from(z);
            let e = acc.entry(z).or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += delta;
            e.2 += delta * delta;
        }
    }
    let mut bins = Vec::new();
    let mut skipped = 0;
    for (z, (k, s, s2)) in acc {
        if k < min_samples.max(2) {
            skipped += 1;
            continue;
        }
        let mean = s / k as f64;
        let var = ((s2 - k as f64 * mean * mean) / (k - 1) as f64).max(0.0);
        bins.push(DriftBin {
            z,
            samples: k,
            mean,
            std_error: (var / k as f64).sqrt(),
            bound: consts.drift_bound(f64::from(z)),
        });
    }
    let worst = bins
        .iter()
        .map(|b| b.mean - b.bound - 3.0 * b.std_error)
        .fold(f64::NEG_INFINITY, f64::max);
    let above_b: Vec<&DriftBin> = bins.iter().filter(|b| f64::from(b.z) > consts.big_b).collect();
    let negative_above_b = above_b.iter().all(|b| b.mean < 0.0);
    let pass = !bins.is_empty() && worst <= 0.0 && negative_above_b && traces.len() >= 20;
    let detail = format!(
        "{} bins checked, {skipped} skipped (< {min_samples} samples); B = {:.3}, b = {:.3}; {} bins above B{}; {} traces",
        bins.len(),
        consts.big_b,
        consts.small_b,
        above_b.len(),
        if negative_above_b { "" } else { " with nonnegative drift" },
        traces.len()
    );
    let report = BoundReport::new("drift", 0.0, if bins.is_empty() { f64::NAN } else { worst }, pass, 3.0, detail);
    (report, bins)
}

/// Per-slot mean and standard error of `Z_t` over equal-length traces.
pub fn mean_series(traces: &[PopulationTrace]) -> (Vec<f64>, Vec<f64>) {
    let len = traces.iter().map(|t| t.z.len()).min().unwrap_or(0);
    let k = traces.len() as f64;
    let mut mean = vec![0.0; len];
    let mut se = vec![0.0; len];
    for t in 0..len {
        let (s, s2) = traces.iter().fold((0.0, 0.0), |(s, s2), tr| {
            let z = f64::from(tr.z[t]);
            (s + z, s2 + z * z)
        });
        let m = s / k;
        mean[t] = m;
        se[t] = if k > 1.0 { (((s2 - k * m * m) / (k - 1.0)).max(0.0) / k).sqrt() } else { 0.0 };
    }
    (mean, se)
}

/// Peak-population parameters for a complete graph with `A = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub n: usize,
    pub q: f64,
    pub zeta: f64,
    pub z0: usize,
    /// Number of Pac-Man nodes.
    pub k: usize,
}

impl PeakParams {
    /// Fixed point `q(N−k)N/(kζ)` of the mean recursion.
    pub fn fixed_point(&self) -> f64 {
        self.q * (self.n - self.k) as f64 * self.n as f64 / (self.k as f64 * self.zeta)
    }

    /// `max{z0, qN²/ζ}` for one Pac-Man, `max{z0, q(N−k)N/(kζ)}` otherwise.
    pub fn envelope(&self) -> f64 {
        let level = if self.k == 1 {
            self.q * (self.n * self.n) as f64 / self.zeta
        } else {
            self.fixed_point()
        };
        level.max(self.z0 as f64)
    }

    /// `R + (1 − kζ/N)^t (z0 − R)` with `R` the fixed point.
    pub fn recursion_bound(&self, t: u64) -> f64 {
        let r = self.fixed_point();
        let rho = 1.0 - self.k as f64 * self.zeta / self.n as f64;
        r + rho.powf(t as f64) * (self.z0 as f64 - r)
    }
}

/// `Z̄* = sup_t mean(Z_t)` against the envelope, and the mean recursion
/// bound at every slot within three standard errors.
pub fn check_peak(traces: &[PopulationTrace], params: &PeakParams) -> Vec<BoundReport> {
    let (mean, se) = mean_series(traces);
    let (arg, peak) = mean
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (t, &m)| if m > a.1 { (t, m) } else { a });
    let env = params.envelope();
    let peak_report = BoundReport::new(
        "peak",
        env,
        peak,
        peak <= env,
        0.0,
        format!(
            "N = {}, q = {}, ζ = {}, z0 = {}, k = {}; sup of the {}-seed mean at t = {arg}",
            params.n,
            params.q,
            params.zeta,
            params.z0,
            params.k,
            traces.len()
        ),
    );
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = 0;
    for (t, (&m, &s)) in mean.iter().zip(&se).enumerate() {
        let excess = m - params.recursion_bound(t as u64) - 3.0 * s;
        if excess > worst {
            worst = excess;
            worst_t = t;
        }
    }
    let recursion_report = BoundReport::new(
        "peak-recursion",
        0.0,
        worst,
        worst <= 0.0,
        3.0,
        format!("largest excess of mean − bound − 3 SE at t = {worst_t} over {} slots", mean.len()),
    );
    vec![peak_report, recursion_report]
}

/// `Iter_T / T` of each chain against `[LB − slack, 1]`, where `slack`
/// defaults to three standard errors across chains; plus the dominated
/// process's renewal rate against the closed form within `renewal_rtol`.
pub fn check_iteration_rate(
    chains: &[WalkChain],
    dominated: &[DominatedRun],
    n: usize,
    zeta: f64,
    a: u64,
    q: f64,
    slack: Option<f64>,
    renewal_rtol: f64,
) -> Vec<BoundReport> {
    let lb = renewal_lower_bound(n, zeta, a, q);
    let rates: Vec<f64> = chains
        .iter()
        .filter(|c| !c.iter.is_empty())
        .map(|c| c.total_iterations() as f64 / c.iter.len() as f64)
        .collect();
    let k = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / k;
    let se = if rates.len() > 1 {
        (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt()
    } else {
        0.0
    };
    let slack = slack.unwrap_or(3.0 * se);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let cil = BoundReport::new(
        "iteration-rate",
        lb,
        mean,
        !rates.is_empty() && mean >= lb - slack && rates.iter().all(|&r| r <= 1.0),
        slack,
        format!("{} chains, min rate {min:.5}, SE {se:.2e}", rates.len()),
    );

    let it: u64 = dominated.iter().flat_map(|d| &d.cycles).map(|c| c.iterations).sum();
    let len: u64 = dominated.iter().flat_map(|d| &d.cycles).map(|c| c.length()).sum();
    let cycles: usize = dominated.iter().map(|d| d.cycles.len()).sum();
    let renewal = if len > 0 { it as f64 / len as f64 } else { f64::NAN };
    let dom = BoundReport::new(
        "renewal-rate",
        lb,
        renewal,
        cycles >= 10_000 && (renewal / lb - 1.0).abs() <= renewal_rtol,
        renewal_rtol,
        format!("{cycles} complete cycles"),
    );
    vec![cil, dom]
}

/// Stabilized running maximum: no trace sets a new record of `Z_t` in the
/// final half of its horizon, and no value exceeds ten times `envelope`.
pub fn check_boundedness(traces: &[PopulationTrace], envelope: Option<f64>) -> BoundReport {
    let mut late_records = 0;
    let mut overall = 0u32;
    let mut short = 0;
    for tr in traces {
        if tr.z.len() < 100_000 {
            short += 1;
        }
        let peak = tr.peak();
        overall = overall.max(peak);
        let first = tr.z.iter().position(|&z| z == peak).unwrap_or(0);
        if first >= tr.z.len() / 2 && first > 0 {
            late_records += 1;
        }
    }
    let within = envelope.map_or(true, |e| f64::from(overall) <= 10.0 * e);
    BoundReport::new(
        "boundedness",
        envelope.map_or(f64::NAN, |e| 10.0 * e),
        f64::from(overall),
        late_records == 0 && within,
        0.0,
        format!(
            "{late_records} of {} traces set a new maximum in the final half{}",
            traces.len(),
            if short > 0 { format!("; {short} traces shorter than 1e5 slots") } else { String::new() }
        ),
    )
}

/// Extinction intervals: with `q = 1` every interval has length at most
/// `min_threshold + 1`. An interval still open at the horizon is censored and
/// fails only once it outlasts `min_threshold + 1` slots (plus `⌈20/q⌉` when
/// `q < 1`, after which a late node would have created with probability
/// at least `1 − e⁻²⁰`).
pub fn check_extinction(traces: &[PopulationTrace], min_threshold: u64, q: f64) -> BoundReport {
    let grace = min_threshold + 1 + if q > 0.0 && q < 1.0 { (20.0 / q).ceil() as u64 } else { 0 };
    let mut longest = 0;
    let mut censored = 0;
    let mut stuck = 0;
    let mut count = 0;
    for tr in traces {
        for iv in tr.extinction_intervals() {
            count += 1;
            if iv.recovered {
                longest = longest.max(iv.len());
            } else if iv.len() <= grace {
                censored += 1;
            } else {
                stuck += 1;
                longest = longest.max(iv.len());
            }
        }
    }
    let limit = (min_threshold + 1) as f64;
    let pass = stuck == 0 && (q < 1.0 || longest as f64 <= limit);
    BoundReport::new(
        "extinction",
        if q < 1.0 { f64::INFINITY } else { limit },
        longest as f64,
        pass,
        0.0,
        format!(
            "{count} intervals, {censored} censored by the horizon, {stuck} unrecovered past {grace} slots, {} traces",
            traces.len()
        ),
    )
}
