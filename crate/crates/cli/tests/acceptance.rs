//! Acceptance checks. Prints one PASS/FAIL line per criterion.
//!
//! Exits 0 even when a criterion fails so that the rest of the workspace
//! tests still run; set `CILWALK_ACCEPTANCE_STRICT=1` to exit 1 instead.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cilwalk_core::adversary::{augment, AdversaryConfig, AugmentedChain};
use cilwalk_core::engine::{
    extract_surviving_chain, run, run_decafork_baseline, run_dominated_single, run_replications, CilConfig, CilSimulation,
    DecaforkConfig, DominatedOptions, Placement, PopulationTrace, RunOptions, WalkChain,
};
use cilwalk_core::graph::{generate_topology, metropolis_hastings, GraphSpec, Topology};
use cilwalk_core::learn::{
    chain_loss_trace, optima_report, run_gossip_baseline, solve_weighted_optimum, LearnProblem, SgdPayload, StepSchedule, SyntheticSpec,
};
use cilwalk_core::matrix::total_variation;
use cilwalk_core::rng::{self, Stream};
use cilwalk_core::spectral::{chain_stationary, qsd, yaglom_oracle, QsdResult};
use cilwalk_core::verify::{check_boundedness, check_extinction, check_iteration_rate, check_peak, PeakParams};
use rayon::prelude::*;

const SEEDS: usize = 20;
const HORIZON: u64 = 100_000;
/// Seeds for the multi-Pac-Man peak sweeps. The sup of a sample mean sits
/// about 3.5 standard errors above the true sup over these horizons; with
/// 20 seeds that exceeds the gap between E[Z_t] and the k = 10 envelope.
const PEAK_SEEDS: usize = 200;

fn topologies() -> [(&'static str, Topology); 4] {
    [
        ("complete", Topology::Complete),
        ("random-regular", Topology::RandomRegular { degree: 8 }),
        ("ring", Topology::Ring),
        ("erdos-renyi", Topology::ErdosRenyi { edge_probability: 0.1 }),
    ]
}

fn build(top: Topology, n: usize, adv: &AdversaryConfig) -> (GraphSpec, AugmentedChain) {
    let g = generate_topology(top, n, 0).expect("topology");
    let ch = augment(&metropolis_hastings(&g), adv).expect("chain");
    (g, ch)
}

fn single(zeta: f64) -> AdversaryConfig {
    AdversaryConfig::single(zeta).unwrap()
}

fn traces(ch: &AugmentedChain, cfg: &CilConfig, reps: usize) -> Vec<PopulationTrace> {
    run_replications(ch, cfg, reps, RunOptions::counts_only()).expect("run")
}

/// Extinction check over `[0, HORIZON)` plus a follow-up run: the same
/// seeds continue past the horizon so that intervals open at `HORIZON` can be
/// seen to end. Runs are prefix-consistent in the horizon.
fn extinction_with_followup(ch: &AugmentedChain, a: u64, q: f64, seed: u64) -> (bool, String) {
    let extra = a + 1 + if q < 1.0 { (20.0 / q).ceil() as u64 } else { 0 };
    let cfg = CilConfig::uniform(a, q, 1, HORIZON + extra, seed);
    let long = traces(ch, &cfg, SEEDS);
    let within: Vec<PopulationTrace> = long
        .iter()
        .map(|tr| PopulationTrace {
            z: tr.z[..HORIZON as usize].to_vec(),
            ..Default::default()
        })
        .collect();
    let rep = check_extinction(&within, a, q);
    let mut open = 0;
    let mut recovered_later = 0;
    let mut longest = 0;
    for tr in &long {
        for iv in tr.extinction_intervals().into_iter().filter(|iv| iv.start < HORIZON) {
            if iv.end > HORIZON || !iv.recovered {
                open += 1;
                if iv.recovered {
                    recovered_later += 1;
                }
            }
            if iv.recovered {
                longest = longest.max(iv.len());
            }
        }
    }
    let followup = open == recovered_later && (q < 1.0 || longest <= a + 1);
    (
        rep.pass && followup,
        format!("longest {longest}; {}; {recovered_later}/{open} open at the horizon recover afterwards", rep.detail),
    )
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn no_permanent_extinction() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, top) in topologies() {
        let (_, ch) = build(top, 100, &single(1.0));
        for q in [1.0, 0.5] {
            let (pass, detail) = extinction_with_followup(&ch, 10, q, 11);
            ok &= pass;
            parts.push(format!("{name} q={q}: {detail}"));
        }
    }
    outcome(ok, parts.join("; "))
}

fn boundedness() -> Outcome {
    let mut ok = true;
    let mut failing = Vec::new();
    let mut configs = 0;
    for (name, top) in topologies() {
        for a in [10u64, 350] {
            for zeta in [1.0, 0.1, 0.01] {
                let (_, ch) = build(top, 100, &single(zeta));
                let cfg = CilConfig::uniform(a, 1.0, 5, HORIZON, 23);
                let envelope = (top == Topology::Complete).then(|| 1e4 / zeta);
                let rep = check_boundedness(&traces(&ch, &cfg, SEEDS), envelope);
                configs += 1;
                if !rep.pass {
                    ok = false;
                    failing.push(format!("{name} A={a} ζ={zeta}: {}", rep.detail));
                }
            }
        }
    }
    if ok {
        outcome(true, format!("{configs} configurations, no late records"))
    } else {
        outcome(false, format!("{} of {configs} configurations fail: {}", failing.len(), failing.join("; ")))
    }
}

fn peak_bound() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for n in [20usize, 50, 100] {
        let (_, ch) = build(Topology::Complete, n, &single(1.0));
        let nf = n as f64;
        for (label, q) in [("1", 1.0), ("1/N", 1.0 / nf), ("1/N²", 1.0 / (nf * nf))] {
            let cfg = CilConfig::uniform(1, q, 1, HORIZON, 31);
            let params = PeakParams {
                n,
                q,
                zeta: 1.0,
                z0: 1,
                k: 1,
            };
            let reps = check_peak(&traces(&ch, &cfg, SEEDS), &params);
            let peak = reps[0].empirical;
            let mut pass = reps.iter().all(|r| r.pass);
            if n == 100 && label == "1" {
                pass &= (150.0..=260.0).contains(&peak);
            }
            if label == "1/N²" {
                pass &= (1.0..=5.0).contains(&peak);
            }
            ok &= pass;
            parts.push(format!(
                "N={n} q={label}: Z̄*={peak:.2} env={:.1} recursion excess {:.3}{}",
                reps[0].theoretical,
                reps[1].empirical,
                if pass { "" } else { " FAIL" }
            ));
        }
    }
    outcome(ok, parts.join("; "))
}

/// All graphs on 3 to 5 nodes plus a few 6-node ones, robustly connected
/// with respect to node 0.
fn small_graphs() -> Vec<GraphSpec> {
    let mut out = Vec::new();
    for n in 3..=5usize {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
            if let Ok(g) = GraphSpec::with_uniform_target(n, edges) {
                if g.is_robustly_connected(&[0]) {
                    out.push(g);
                }
            }
        }
    }
    let six: Vec<Vec<(usize, usize)>> = vec![
        (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect(),
        (0..6).map(|i| (i, (i + 1) % 6)).collect(),
        (0..5).map(|i| (i, i + 1)).collect(),
        (0..6).filter(|&i| i != 1).map(|i| (1, i)).collect(),
        vec![(0, 3), (0, 4), (0, 5), (1, 3), (1, 4), (1, 5), (2, 3), (2, 4), (2, 5)],
        vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (0, 3), (1, 4), (2, 5)],
        (1..6).map(|i| (0, i)).chain((1..6).map(|i| (i, i % 5 + 1))).collect(),
    ];
    for edges in six {
        let g = GraphSpec::with_uniform_target(6, edges).unwrap();
        assert!(g.is_robustly_connected(&[0]));
        out.push(g);
    }
    // Non-uniform targets on a subset.
    let skewed: Vec<GraphSpec> = out
        .iter()
        .step_by(7)
        .map(|g| {
            let n = g.node_count();
            let w: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            let s: f64 = w.iter().sum();
            GraphSpec::new(n, g.edges().to_vec(), w.iter().map(|x| x / s).collect()).unwrap()
        })
        .collect();
    out.extend(skewed);
    out
}

fn small_chains() -> Vec<(GraphSpec, f64, AugmentedChain, QsdResult)> {
    let graphs = small_graphs();
    graphs
        .par_iter()
        .flat_map_iter(|g| {
            [1.0, 0.5, 0.1].into_iter().map(move |zeta| {
                let ch = augment(&metropolis_hastings(g), &single(zeta)).unwrap();
                let r = qsd(&ch, 1e-13, 2_000_000).unwrap();
                (g.clone(), zeta, ch, r)
            })
        })
        .collect()
}

fn qsd_correctness(cases: &[(GraphSpec, f64, AugmentedChain, QsdResult)]) -> Outcome {
    let mut worst_res = 0.0f64;
    let mut worst_tv = 0.0f64;
    for (_, _, ch, r) in cases {
        worst_res = worst_res.max(r.residual);
        for &u in &r.transient {
            let y = yaglom_oracle(ch, u, 200).unwrap();
            worst_tv = worst_tv.max(total_variation(&y, &r.nu));
        }
    }
    let (_, big) = build(Topology::Complete, 100, &single(1.0));
    let r = qsd(&big, 1e-13, 2_000_000).unwrap();
    let uniform_err = r.nu.iter().map(|x| (x - 1.0 / 99.0).abs()).fold(0.0, f64::max);
    let pass = worst_res <= 1e-10 && worst_tv <= 1e-6 && uniform_err <= 1e-12 && r.nu.len() == 99;
    outcome(
        pass,
        format!(
            "{} graph/ζ cases: max residual {worst_res:.2e}, max Yaglom TV {worst_tv:.2e}; complete N=100 max |ν−1/99| {uniform_err:.2e}",
            cases.len()
        ),
    )
}

fn p_chain_algebra(cases: &[(GraphSpec, f64, AugmentedChain, QsdResult)]) -> Outcome {
    let mut worst_row = 0.0f64;
    let mut worst_tv = 0.0f64;
    let mut complete = 0;
    for (g, _, _, r) in cases {
        let p = r.p_chain.matrix();
        for i in 0..p.rows() {
            worst_row = worst_row.max((p.row_sum(i) - 1.0).abs());
        }
        let n = g.node_count();
        let uniform = g.target().iter().all(|&x| (x - 1.0 / n as f64).abs() < 1e-15);
        if g.edges().len() == n * (n - 1) / 2 && uniform {
            complete += 1;
            let s = chain_stationary(&r.p_chain, 1e-14, 2_000_000).unwrap();
            worst_tv = worst_tv.max(total_variation(&s, &r.nu));
        }
    }
    for n in [20, 100] {
        for zeta in [1.0, 0.5, 0.1] {
            let (_, ch) = build(Topology::Complete, n, &single(zeta));
            let r = qsd(&ch, 1e-13, 2_000_000).unwrap();
            let s = chain_stationary(&r.p_chain, 1e-14, 2_000_000).unwrap();
            worst_tv = worst_tv.max(total_variation(&s, &r.nu));
            complete += 1;
        }
    }
    outcome(
        worst_row <= 1e-12 && worst_tv <= 1e-10,
        format!("max |row sum − 1| {worst_row:.2e}; {complete} complete cases, max TV(stationary, ν) {worst_tv:.2e}"),
    )
}

fn surviving(trace: &PopulationTrace, seed: u64) -> WalkChain {
    let mut rng = rng::stream(seed, Stream::Lineage);
    trace
        .walks
        .iter()
        .filter(|w| w.parent.is_none())
        .find_map(|w| extract_surviving_chain(trace, w.id, &mut rng).ok())
        .expect("a walk survives")
}

fn learn_instance(n: usize, heterogeneity: f64, data_seed: u64, g: &GraphSpec) -> LearnProblem {
    LearnProblem::synthetic(
        &SyntheticSpec {
            dim: 5,
            rows_per_node: 10,
            heterogeneity,
            seed: data_seed,
        },
        g.target().to_vec(),
    )
    .map(|p| {
        assert_eq!(p.node_count(), n);
        p
    })
    .unwrap()
}

const SCHEDULE: StepSchedule = StepSchedule::Diminishing { gamma0: 0.5, tau: 4.0 };

fn convergence_and_sandwich() -> Outcome {
    let n = 20;
    let (g, ch) = build(Topology::Complete, n, &single(1.0));
    let problem = learn_instance(n, 0.05, 0, &g);
    let r = qsd(&ch, 1e-13, 2_000_000).unwrap();
    let report = optima_report(&problem, &r, &SCHEDULE).unwrap();

    let cfg = CilConfig::uniform(10, 1.0, 1, 160_000, 41);
    let trace = run(&ch, &cfg, RunOptions::default()).unwrap();
    let chain = surviving(&trace, cfg.seed);
    let payload = SgdPayload {
        problem: &problem,
        schedule: SCHEDULE,
    };
    let mut sim = CilSimulation::with_payload(&ch, &cfg, RunOptions::counts_only(), &payload).unwrap();
    for _ in 0..cfg.horizon {
        sim.step();
    }
    let last = *chain.members.last().unwrap();
    let tok = sim.tokens().iter().find(|t| t.walk_id == last).expect("last member alive");
    let err = tok
        .model
        .iter()
        .zip(&report.x_tilde_star)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let iters = chain.total_iterations();
    let conv = err <= 1e-3 && iters >= 100_000;

    let mut instances = 0;
    let mut loose = 0;
    let mut tight = 0;
    for (_, top) in topologies() {
        for zeta in [1.0, 0.5, 0.1] {
            let g = generate_topology(top, n, 0).unwrap();
            let ch = augment(&metropolis_hastings(&g), &single(zeta)).unwrap();
            let r = qsd(&ch, 1e-13, 2_000_000).unwrap();
            for het in [0.05, 0.5, 2.0] {
                for seed in 0..5 {
                    let p = learn_instance(n, het, seed, &g);
                    let rep = optima_report(&p, &r, &SCHEDULE).unwrap();
                    instances += 1;
                    if rep.lower_holds && rep.upper_loose_holds {
                        loose += 1;
                    }
                    if rep.upper_holds {
                        tight += 1;
                    }
                }
            }
        }
    }
    outcome(
        conv && loose == instances,
        format!(
            "‖x_T − x̃*‖ = {err:.2e} after {iters} chain iterations; sandwich with 2/μ on {loose}/{instances} instances, with 1/μ on {tight}/{instances}"
        ),
    )
}

fn iteration_rate() -> Outcome {
    let (_, ch) = build(Topology::Complete, 100, &single(1.0));
    let seeds = [51u64, 52, 53];
    let chains: Vec<WalkChain> = seeds
        .par_iter()
        .map(|&s| {
            let cfg = CilConfig::uniform(10, 1.0, 1, 1_000_000, s);
            surviving(&run(&ch, &cfg, RunOptions::default()).unwrap(), s)
        })
        .collect();
    let dominated: Vec<_> = (0..4u64)
        .into_par_iter()
        .map(|s| run_dominated_single(&ch, &CilConfig::uniform(10, 1.0, 1, 1_000_000, 60 + s), DominatedOptions::default()).unwrap())
        .collect();
    let reps = check_iteration_rate(&chains, &dominated, 100, 1.0, 10, 1.0, Some(0.01), 0.02);
    let rates: Vec<f64> = chains.iter().map(|c| c.total_iterations() as f64 / c.iter.len() as f64).collect();
    let lb = reps[0].theoretical;
    let per_chain = rates.iter().all(|&r| r >= lb - 0.01 && r <= 1.0);
    outcome(
        per_chain && reps.iter().all(|r| r.pass),
        format!(
            "bound {lb:.4}; chain rates {:?}; renewal rate {:.4} ({})",
            rates.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>(),
            reps[1].empirical,
            reps[1].detail
        ),
    )
}

fn multi_pacman() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for k in [1usize, 3, 10] {
        let adv = AdversaryConfig::first_k(k, 1.0).unwrap();
        let (_, ch) = build(Topology::Complete, 100, &adv);
        let (pass, detail) = extinction_with_followup(&ch, 350, 1.0, 71);
        ok &= pass;
        parts.push(format!("k={k} A=350: {detail}"));
        for (label, q) in [("1", 1.0), ("1/N", 0.01)] {
            let cfg = CilConfig::uniform(1, q, 1, 20_000, 72);
            let params = PeakParams {
                n: 100,
                q,
                zeta: 1.0,
                z0: 1,
                k,
            };
            let reps = check_peak(&traces(&ch, &cfg, PEAK_SEEDS), &params);
            let pass = reps.iter().all(|r| r.pass);
            ok &= pass;
            parts.push(format!("k={k} A=1 q={label}: Z̄*={:.1} ≤ {:.1}{}", reps[0].empirical, reps[0].theoretical, if pass { "" } else { " FAIL" }));
        }
    }
    outcome(ok, parts.join("; "))
}

fn permanently_extinct(tr: &PopulationTrace) -> bool {
    let from = tr.z.len() * 7 / 10;
    tr.z[from..].iter().all(|&z| z == 0)
}

fn baseline_dichotomy() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, top) in topologies() {
        let (g, ch) = build(top, 100, &single(1.0));
        let (mut dec, mut cil) = (0, 0);
        for s in 0..5u64 {
            let d = DecaforkConfig {
                epsilon: 1e-4,
                target_count: 10.0,
                window: 10,
                initial_walks: 10,
                placement: Placement::UniformRandom,
                horizon: HORIZON,
                seed: 80 + s,
            };
            if permanently_extinct(&run_decafork_baseline(&ch, g.target(), &d).unwrap()) {
                dec += 1;
            }
            let c = CilConfig::uniform(10, 1.0, 10, HORIZON, 80 + s);
            if permanently_extinct(&run(&ch, &c, RunOptions::counts_only()).unwrap()) {
                cil += 1;
            }
        }
        ok &= dec >= 1 && cil == 0;
        parts.push(format!("{name}: DecAFork extinct {dec}/5, CIL {cil}/5"));
    }

    let n = 20;
    let adv = single(1.0);
    let (g, ch) = build(Topology::Complete, n, &adv);
    let problem = learn_instance(n, 0.05, 0, &g);
    let f0 = problem.loss(&problem.initial_model());
    let fstar = problem.loss(&solve_weighted_optimum(&problem, problem.pi()).unwrap());
    let level = fstar + 0.01 * (f0 - fstar);
    let budget = 20_000u64;
    let cfg = CilConfig::uniform(10, 1.0, 1, budget, 91);
    let trace = run(&ch, &cfg, RunOptions::default()).unwrap();
    let chain = surviving(&trace, cfg.seed);
    let cil_steps = chain_loss_trace(&ch, &cfg, &problem, &SCHEDULE, &chain)
        .unwrap()
        .iter()
        .position(|p| p.loss <= level)
        .map(|t| t as u64 + 1);
    let gossip = run_gossip_baseline(&g, Some(&adv), &problem, &SCHEDULE, budget, 91).unwrap();
    let gossip_steps = gossip.loss.iter().position(|&l| l <= level).map(|t| t as u64 + 1);
    let faster = match (cil_steps, gossip_steps) {
        (Some(c), Some(gs)) => gs >= 5 * c,
        (Some(c), None) => budget >= 5 * c,
        _ => false,
    };
    ok &= faster;
    parts.push(format!(
        "loss level {level:.4}: CIL RW-SGD {} slots, gossip {}",
        cil_steps.map_or("never".into(), |s| s.to_string()),
        gossip_steps.map_or(format!("not within {budget} steps"), |s| format!("{s} steps"))
    ));
    outcome(ok, parts.join("; "))
}

fn determinism() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("cilwalk-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let cfg_path = tmp.join("config.toml");
    std::fs::write(
        &cfg_path,
        "[graph]\ntopology = \"random_regular\"\nnodes = 50\nseed = 3\n\n[cil]\nthreshold = 20\nq = 0.5\nz0 = 3\nhorizon = 20000\n\n[run]\nseed = 12345\nreplications = 4\nevents = true\n",
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_cilwalk");
    let run_cli = |out: &Path| -> Option<PathBuf> {
        let status = Command::new(bin)
            .args(["simulate", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(out)
            .args(["--jobs", "2"])
            .output()
            .ok()?;
        if !status.status.success() {
            return None;
        }
        std::fs::read_dir(out).ok()?.next()?.ok().map(|e| e.path())
    };
    let (Some(a), Some(b)) = (run_cli(&tmp.join("a")), run_cli(&tmp.join("b"))) else {
        return outcome(false, "CLI run failed");
    };
    let mut compared = 0;
    let mut identical = true;
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).map_err(|_| ()).unwrap_or_default();
        identical &= x == y;
        compared += 1;
    }
    let same_dir_name = a.file_name() == b.file_name();

    // In-process: every topology, same seed twice.
    let mut in_process = true;
    for (_, top) in topologies() {
        let (_, ch) = build(top, 100, &single(0.5));
        let cfg = CilConfig::uniform(10, 0.5, 2, 20_000, 777);
        let csv = |tr: PopulationTrace| {
            let mut v = Vec::new();
            tr.write_csv(&mut v).unwrap();
            v
        };
        in_process &= csv(run(&ch, &cfg, RunOptions::full()).unwrap()) == csv(run(&ch, &cfg, RunOptions::full()).unwrap());
    }
    let _ = std::fs::remove_dir_all(&tmp);
    outcome(
        identical && same_dir_name && compared > 4 && in_process,
        format!("{compared} CLI output files byte-identical: {identical}; run directory names match: {same_dir_name}; in-process CSVs identical on 4 topologies: {in_process}"),
    )
}

fn main() {
    let strict = std::env::var("CILWALK_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} [{id:>2}] {name} ({:.1}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    };
    report(1, "no permanent extinction", &no_permanent_extinction);
    report(2, "boundedness", &boundedness);
    report(3, "peak bound", &peak_bound);
    let cases = small_chains();
    report(4, "QSD correctness", &|| qsd_correctness(&cases));
    report(5, "P_chain algebra", &|| p_chain_algebra(&cases));
    report(6, "convergence and sandwich", &convergence_and_sandwich);
    report(7, "iteration rate", &iteration_rate);
    report(8, "multi-Pac-Man recovery", &multi_pacman);
    report(9, "baseline dichotomy", &baseline_dichotomy);
    report(10, "determinism", &determinism);
    println!("{failed} of 10 criteria failed");
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
