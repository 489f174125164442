//! Shared fixtures for the benchmarks.

use cilwalk_core::adversary::{augment, AdversaryConfig, AugmentedChain};
use cilwalk_core::graph::{generate_topology, metropolis_hastings, GraphSpec, Topology};

pub fn fixture(topology: Topology, n: usize, zeta: f64) -> (GraphSpec, AugmentedChain) {
    let g = generate_topology(topology, n, 0).expect("benchmark topology");
    let chain = augment(&metropolis_hastings(&g), &AdversaryConfig::single(zeta).expect("zeta")).expect("chain");
    (g, chain)
}

pub const TOPOLOGIES: [(&str, Topology); 4] = [
    ("complete", Topology::Complete),
    ("random_regular", Topology::RandomRegular { degree: 8 }),
    ("ring", Topology::Ring),
    ("erdos_renyi", Topology::ErdosRenyi { edge_probability: 0.1 }),
];
