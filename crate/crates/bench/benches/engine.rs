use cilwalk_bench::{fixture, TOPOLOGIES};
use cilwalk_core::engine::{run, run_decafork_baseline, CilConfig, DecaforkConfig, Placement, RunOptions};
use cilwalk_core::graph::Topology;
use cilwalk_core::learn::{LearnProblem, SgdPayload, StepSchedule, SyntheticSpec};
use cilwalk_core::CilSimulation;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

const SLOTS: u64 = 10_000;

fn cil_slots(c: &mut Criterion) {
    let mut group = c.benchmark_group("cil_10k_slots");
    group.sample_size(10);
    group.throughput(Throughput::Elements(SLOTS));
    for (name, top) in TOPOLOGIES {
        let (_, chain) = fixture(top, 100, 1.0);
        let cfg = CilConfig::uniform(10, 1.0, 1, SLOTS, 1);
        group.bench_function(BenchmarkId::new("counts", name), |b| {
            b.iter(|| run(&chain, &cfg, RunOptions::counts_only()).unwrap())
        });
    }
    let (_, chain) = fixture(Topology::Complete, 100, 1.0);
    let cfg = CilConfig::uniform(10, 1.0, 1, SLOTS, 1);
    group.bench_function("lineage/complete", |b| b.iter(|| run(&chain, &cfg, RunOptions::default()).unwrap()));
    group.bench_function("events/complete", |b| b.iter(|| run(&chain, &cfg, RunOptions::full()).unwrap()));
    group.finish();
}

fn sgd_slots(c: &mut Criterion) {
    let (g, chain) = fixture(Topology::Complete, 20, 1.0);
    let problem = LearnProblem::synthetic(
        &SyntheticSpec {
            dim: 5,
            rows_per_node: 10,
            heterogeneity: 0.05,
            seed: 0,
        },
        g.target().to_vec(),
    )
    .unwrap();
    let payload = SgdPayload {
        problem: &problem,
        schedule: StepSchedule::Diminishing { gamma0: 0.5, tau: 4.0 },
    };
    let cfg = CilConfig::uniform(10, 1.0, 1, SLOTS, 1);
    c.bench_function("rw_sgd_10k_slots", |b| {
        b.iter(|| {
            let mut sim = CilSimulation::with_payload(&chain, &cfg, RunOptions::counts_only(), &payload).unwrap();
            for _ in 0..SLOTS {
                sim.step();
            }
            sim.into_trace()
        })
    });
}

fn decafork_slots(c: &mut Criterion) {
    let (g, chain) = fixture(Topology::Complete, 100, 1.0);
    let cfg = DecaforkConfig {
        epsilon: 0.05,
        target_count: 10.0,
        window: 10,
        initial_walks: 10,
        placement: Placement::UniformRandom,
        horizon: SLOTS,
        seed: 1,
    };
    c.bench_function("decafork_10k_slots", |b| b.iter(|| run_decafork_baseline(&chain, g.target(), &cfg).unwrap()));
}

criterion_group!(benches, cil_slots, sgd_slots, decafork_slots);
criterion_main!(benches);
