//! Create-If-Late random-walk simulation under Pac-Man termination, with the
//! spectral and learning tools used to check its guarantees.
//!
//! Node indices are 0-based internally; node 0 is the default Pac-Man. All
//! text formats and event records use 1-based labels.

pub mod adversary;
pub mod engine;
pub mod error;
pub mod graph;
pub mod learn;
pub mod matrix;
pub mod rng;
pub mod spectral;
pub mod verify;

pub use adversary::{augment, hitting_constants, AdversaryConfig, AugmentedChain, HittingConstants, PacMan};
pub use engine::{CilConfig, CilSimulation, LocalUpdate, NodeLedger, Placement, PopulationTrace, RunOptions, Thresholds, WalkToken};
pub use error::{Error, Result};
pub use graph::{generate_topology, metropolis_hastings, GraphSpec, Topology};
pub use matrix::{DenseMatrix, TransitionMatrix};
pub use spectral::{qsd, QsdResult};
