use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use cilwalk_core::adversary::hitting_constants;
use cilwalk_core::engine::{
    extract_chain, extract_surviving_chain, run, run_decafork_baseline, run_dominated_single, DominatedOptions, DominatedRun,
    PopulationTrace, RunOptions, Thresholds, WalkChain,
};
use cilwalk_core::graph::Topology;
use cilwalk_core::learn::{chain_loss_trace, optima_report, run_gossip_baseline, solve_weighted_optimum, write_loss_csv};
use cilwalk_core::rng::{self, Stream};
use cilwalk_core::spectral::{qsd, tv_to_target, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use cilwalk_core::verify::{
    check_boundedness, check_drift, check_extinction, check_iteration_rate, check_peak, BoundReport, DriftConstants, PeakParams,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Algorithm, Check, ExperimentConfig, Resolved};
use crate::output::{create_file, write_json};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Qsd,
    Learn,
    Verify,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Qsd => "qsd",
            Command::Learn => "learn",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "simulate" => Command::Simulate,
            "qsd" => Command::Qsd,
            "learn" => Command::Learn,
            "verify" => Command::Verify,
            "sweep" => Command::Sweep,
            _ => return None,
        })
    }
}

/// Result of a completed command. `stdout` is what the binary prints.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub stdout: Value,
    pub passed: bool,
}

/// Runs `command` and writes its files into `dir`, which must exist.
pub fn run_command(command: Command, cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    match command {
        Command::Simulate => simulate(cfg, dir),
        Command::Qsd => cmd_qsd(cfg, dir),
        Command::Learn => learn(cfg, dir),
        Command::Verify => verify(cfg, dir),
        Command::Sweep => sweep(cfg, dir),
    }
}

fn seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    (0..cfg.run.replications).map(|i| cfg.replication_seed(i)).collect()
}

/// One CIL run per replication seed, in parallel, in seed order.
fn cil_traces(cfg: &ExperimentConfig, r: &Resolved, opts: RunOptions) -> Result<Vec<PopulationTrace>, CliError> {
    seeds(cfg)
        .into_par_iter()
        .map(|seed| {
            let c = cfg.cil_config(seed)?;
            Ok(run(&r.chain, &c, opts)?)
        })
        .collect()
}

/// Surviving chain if one exists, otherwise a uniform lineage of walk 0.
fn designated_chain(trace: &PopulationTrace, seed: u64) -> Result<WalkChain, CliError> {
    surviving_chain(trace, seed).or_else(|_| {
        let mut rng = rng::stream(seed, Stream::Lineage);
        Ok(extract_chain(trace, trace.initial_walks[0], &mut rng)?)
    })
}

/// Surviving chain from the first lineage root, in id order, that has a
/// live descendant at the horizon.
fn surviving_chain(trace: &PopulationTrace, seed: u64) -> Result<WalkChain, CliError> {
    let mut rng = rng::stream(seed, Stream::Lineage);
    for root in trace.walks.iter().filter(|w| w.parent.is_none()) {
        if let Ok(chain) = extract_surviving_chain(trace, root.id, &mut rng) {
            return Ok(chain);
        }
    }
    Err(CliError::Config(format!("seed {seed}: no walk is alive at the horizon")))
}

fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let r = cfg.resolve()?;
    let seeds = seeds(cfg);
    let traces: Vec<PopulationTrace> = match cfg.cil.algorithm {
        Algorithm::Cil => {
            let opts = RunOptions {
                record_events: cfg.run.events,
                record_lineage: true,
            };
            let mut traces = cil_traces(cfg, &r, opts)?;
            for (tr, &seed) in traces.iter_mut().zip(&seeds) {
                if !tr.initial_walks.is_empty() {
                    tr.chain_iterations = Some(designated_chain(tr, seed)?.iter);
                }
            }
            traces
        }
        Algorithm::Dominated => seeds
            .par_iter()
            .map(|&seed| {
                let opts = DominatedOptions {
                    record_series: true,
                    ..Default::default()
                };
                Ok(run_dominated_single(&r.chain, &cfg.cil_config(seed)?, opts)?.trace)
            })
            .collect::<Result<_, CliError>>()?,
        Algorithm::Decafork => seeds
            .par_iter()
            .map(|&seed| Ok(run_decafork_baseline(&r.chain, r.graph.target(), &cfg.decafork_config(seed)?)?))
            .collect::<Result<_, CliError>>()?,
    };

    for (i, tr) in traces.iter().enumerate() {
        let mut w = create_file(&dir.join(format!("trace_{i}.csv")))?;
        tr.write_csv(&mut w)?;
        w.flush()?;
        if cfg.run.events {
            let mut w = create_file(&dir.join(format!("events_{i}.jsonl")))?;
            tr.write_events_jsonl(&mut w)?;
            w.flush()?;
        }
    }

    let (mean, _) = cilwalk_core::verify::mean_series(&traces);
    let peak_of_mean = mean.iter().copied().fold(0.0, f64::max);
    let mut histogram: BTreeMap<u64, usize> = BTreeMap::new();
    let mut unrecovered = 0;
    for tr in &traces {
        for iv in tr.extinction_intervals() {
            *histogram.entry(iv.len()).or_default() += 1;
            if !iv.recovered {
                unrecovered += 1;
            }
        }
    }
    let summary = json!({
        "command": "simulate",
        "algorithm": cfg.cil.algorithm,
        "replications": traces.len(),
        "horizon": cfg.cil.horizon,
        "seeds": seeds,
        "peak_of_mean": peak_of_mean,
        "peaks": traces.iter().map(PopulationTrace::peak).collect::<Vec<_>>(),
        "total_creations": traces.iter().map(PopulationTrace::total_creations).collect::<Vec<_>>(),
        "extinction_histogram": histogram.into_iter().map(|(len, count)| json!({"length": len, "count": count})).collect::<Vec<_>>(),
        "unrecovered_extinctions": unrecovered,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(Outcome {
        stdout: summary,
        passed: true,
    })
}

fn cmd_qsd(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let adversary = cfg.adversary_config()?;
    let graph = cfg.graph_spec(&adversary)?;
    adversary.validate_for(graph.node_count())?;
    let chain = cilwalk_core::augment(&cilwalk_core::metropolis_hastings(&graph), &adversary)?;
    let res = qsd(&chain, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let tv = tv_to_target(&res, graph.target());
    let out = json!({
        "alpha": res.alpha,
        "spectral_gap": res.spectral_gap,
        "nu": res.nu,
        "transient_nodes": res.transient.iter().map(|u| u + 1).collect::<Vec<_>>(),
        "pi_chain": res.pi_chain,
        "tv_to_target": tv,
        "residual": res.residual,
        "iterations": res.iterations,
    });
    write_json(&dir.join("qsd.json"), &out)?;
    fs::write(dir.join("chain.txt"), chain.to_text())?;
    Ok(Outcome {
        stdout: out,
        passed: true,
    })
}

fn learn(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let r = cfg.resolve()?;
    let (problem, schedule) = cfg.learn_problem(&r.graph)?;
    if cfg.cil.algorithm != Algorithm::Cil {
        return Err(CliError::Config("learn runs on CIL traces; set cil.algorithm = \"cil\"".into()));
    }
    let q = qsd(&r.chain, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let report = optima_report(&problem, &q, &schedule)?;
    write_json(&dir.join("optima.json"), &report)?;

    let runs: Vec<(u64, Vec<_>)> = seeds(cfg)
        .into_par_iter()
        .map(|seed| {
            let c = cfg.cil_config(seed)?;
            let tr = run(&r.chain, &c, RunOptions::default())?;
            let chain = surviving_chain(&tr, seed)?;
            let points = chain_loss_trace(&r.chain, &c, &problem, &schedule, &chain)?;
            Ok((chain.total_iterations(), points))
        })
        .collect::<Result<_, CliError>>()?;

    for (i, (_, points)) in runs.iter().enumerate() {
        let mut w = create_file(&dir.join(format!("loss_{i}.csv")))?;
        write_loss_csv(points, &mut w)?;
        w.flush()?;
    }

    let mut gossip_final = None;
    if let Some(steps) = cfg.learn.as_ref().and_then(|l| l.gossip_steps) {
        let g = run_gossip_baseline(&r.graph, Some(&r.adversary), &problem, &schedule, steps, cfg.run.seed)?;
        let mut w = create_file(&dir.join("gossip.csv"))?;
        writeln!(w, "step,loss,consensus")?;
        for (k, (l, c)) in g.loss.iter().zip(&g.consensus).enumerate() {
            writeln!(w, "{k},{l:?},{c:?}")?;
        }
        w.flush()?;
        gossip_final = g.loss.last().copied();
    }

    let x_star = solve_weighted_optimum(&problem, problem.pi())?;
    let summary = json!({
        "command": "learn",
        "replications": runs.len(),
        "chain_iterations": runs.iter().map(|r| r.0).collect::<Vec<_>>(),
        "final_loss": runs.iter().map(|r| r.1.last().map_or(f64::NAN, |p| p.loss)).collect::<Vec<_>>(),
        "optimal_loss": problem.loss(&x_star),
        "biased_optimum_loss": problem.loss(&report.x_tilde_star),
        "gossip_final_loss": gossip_final,
        "optima": report,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(Outcome {
        stdout: summary,
        passed: true,
    })
}

fn verify(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let r = cfg.resolve()?;
    if cfg.cil.algorithm != Algorithm::Cil {
        return Err(CliError::Config("verify checks CIL runs; set cil.algorithm = \"cil\"".into()));
    }
    let v = &cfg.verify;
    let n = r.graph.node_count();
    let q = r.cil.creation_probability;
    let zeta = r.adversary.min_zeta();
    let needs_lineage = v.checks.contains(&Check::IterationRate);
    let opts = if needs_lineage {
        RunOptions::default()
    } else {
        RunOptions::counts_only()
    };
    let traces = cil_traces(cfg, &r, opts)?;
    let complete = r.graph.topology() == Topology::Complete;
    let peak_params = PeakParams {
        n,
        q,
        zeta,
        z0: r.cil.initial_walks,
        k: r.adversary.count(),
    };

    let mut reports: Vec<BoundReport> = Vec::new();
    let mut checks = v.checks.clone();
    checks.sort();
    checks.dedup();
    for check in checks {
        match check {
            Check::Extinction => reports.push(check_extinction(&traces, r.cil.min_threshold(&r.chain), q)),
            Check::Boundedness => reports.push(check_boundedness(&traces, complete.then(|| peak_params.envelope()))),
            Check::Peak => {
                if !complete {
                    return Err(CliError::Config("the peak check needs a complete graph".into()));
                }
                reports.extend(check_peak(&traces, &peak_params));
            }
            Check::Drift => {
                let h = hitting_constants(&r.chain)?;
                let consts = DriftConstants::from_hitting(&h, n, zeta, v.drift_epsilon)?;
                let (report, bins) = check_drift(&traces, &consts, v.min_bin_samples);
                write_json(&dir.join("drift_bins.json"), &bins)?;
                reports.push(report);
            }
            Check::IterationRate => {
                let a = match r.cil.thresholds {
                    Thresholds::Uniform(a) => a,
                    Thresholds::PerNode(_) => {
                        return Err(CliError::Config("the iteration-rate check needs a uniform threshold".into()))
                    }
                };
                let chains: Vec<WalkChain> = traces
                    .iter()
                    .zip(seeds(cfg))
                    .map(|(tr, seed)| surviving_chain(tr, seed))
                    .collect::<Result<_, _>>()?;
                let dominated: Vec<DominatedRun> = seeds(cfg)
                    .into_par_iter()
                    .map(|seed| {
                        let mut c = cfg.cil_config(seed)?;
                        c.horizon = v.dominated_horizon.unwrap_or(c.horizon);
                        Ok(run_dominated_single(&r.chain, &c, DominatedOptions::default())?)
                    })
                    .collect::<Result<_, CliError>>()?;
                reports.extend(check_iteration_rate(&chains, &dominated, n, zeta, a, q, v.iteration_slack, v.renewal_rtol));
            }
        }
    }
    write_json(&dir.join("reports.json"), &reports)?;
    let passed = reports.iter().all(|rep| rep.pass);
    Ok(Outcome {
        stdout: serde_json::to_value(&reports)?,
        passed,
    })
}

fn sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome, CliError> {
    let name = cfg.sweep.command.as_deref().unwrap_or("simulate");
    let command = Command::parse(name)
        .filter(|c| *c != Command::Sweep)
        .ok_or_else(|| CliError::Config(format!("sweep.command must be simulate, qsd, learn or verify, got {name:?}")))?;
    let points = cfg.expand_sweep()?;
    for p in &points {
        p.config.resolve()?;
    }
    let results: Vec<Value> = points
        .par_iter()
        .map(|p| {
            let sub = dir.join(format!("point-{:04}", p.index));
            fs::create_dir(&sub)?;
            fs::write(sub.join("config.toml"), p.config.to_toml())?;
            let out = run_command(command, &p.config, &sub)?;
            let assignments: BTreeMap<&String, Value> = p
                .assignments
                .iter()
                .map(|(k, v)| (k, serde_json::to_value(v).unwrap_or(Value::Null)))
                .collect();
            Ok(json!({
                "index": p.index,
                "seed": p.config.run.seed,
                "assignments": assignments,
                "passed": out.passed,
                "result": out.stdout,
            }))
        })
        .collect::<Result<_, CliError>>()?;
    let passed = results.iter().all(|r| r["passed"].as_bool().unwrap_or(false));
    let merged = json!({
        "command": command.name(),
        "points": results,
    });
    write_json(&dir.join("sweep.json"), &merged)?;
    Ok(Outcome { stdout: merged, passed })
}
