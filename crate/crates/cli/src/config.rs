//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `graph`, `adversary`, `cil`,
//! `learn`, `decafork`, `run`, `verify` and `sweep`. Node labels are 1-based.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cilwalk_core::adversary::{augment, AdversaryConfig, AugmentedChain, PacMan};
use cilwalk_core::engine::{CilConfig, DecaforkConfig, Placement, Thresholds};
use cilwalk_core::graph::{generate_topology_with, metropolis_hastings, GenerateOptions, GraphSpec, Topology};
use cilwalk_core::learn::{LearnProblem, StepSchedule, SyntheticSpec};
use cilwalk_core::rng::derive_seed;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSection,
    #[serde(default)]
    pub adversary: AdversarySection,
    #[serde(default)]
    pub cil: CilSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn: Option<LearnSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decafork: Option<DecaforkSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default, skip_serializing_if = "SweepSection::is_empty")]
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Complete,
    RandomRegular,
    Ring,
    ErdosRenyi,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub topology: TopologyKind,
    #[serde(default)]
    pub nodes: Option<usize>,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_edge_probability")]
    pub edge_probability: f64,
    /// Edge-list file for `custom` topologies.
    #[serde(default)]
    pub edge_list: Option<PathBuf>,
    /// Target distribution file, one probability per line; uniform if absent.
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_resample_budget")]
    pub resample_budget: u32,
}

fn default_degree() -> usize {
    8
}

fn default_edge_probability() -> f64 {
    0.1
}

fn default_resample_budget() -> u32 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZetaSpec {
    Shared(f64),
    PerNode(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    /// 1-based Pac-Man labels.
    #[serde(default = "default_pacman")]
    pub nodes: Vec<usize>,
    #[serde(default = "default_zeta")]
    pub zeta: ZetaSpec,
}

fn default_pacman() -> Vec<usize> {
    vec![1]
}

fn default_zeta() -> ZetaSpec {
    ZetaSpec::Shared(1.0)
}

impl Default for AdversarySection {
    fn default() -> Self {
        Self {
            nodes: default_pacman(),
            zeta: default_zeta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    #[default]
    Cil,
    Dominated,
    Decafork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CilSection {
    #[serde(default = "default_threshold")]
    pub threshold: u64,
    /// Per-node thresholds (one per node, Pac-Man entries ignored).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// `q = N^(−q_exponent)`; takes precedence over `q`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_exponent: Option<f64>,
    #[serde(default = "default_z0")]
    pub z0: usize,
    /// 1-based start nodes; uniform over benign nodes if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_nodes: Option<Vec<usize>>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default)]
    pub algorithm: Algorithm,
}

fn default_threshold() -> u64 {
    10
}

fn default_z0() -> usize {
    1
}

fn default_horizon() -> u64 {
    10_000
}

impl Default for CilSection {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            thresholds: None,
            q: None,
            q_exponent: None,
            z0: default_z0(),
            initial_nodes: None,
            horizon: default_horizon(),
            algorithm: Algorithm::Cil,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Diminishing,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rows")]
    pub rows_per_node: usize,
    #[serde(default = "default_heterogeneity")]
    pub heterogeneity: f64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default = "default_gamma0")]
    pub gamma0: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Constant step; defaults to `1/(2L)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Also run gossip SGD for this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_steps: Option<u64>,
}

fn default_dim() -> usize {
    5
}

fn default_rows() -> usize {
    10
}

fn default_heterogeneity() -> f64 {
    0.1
}

fn default_gamma0() -> f64 {
    0.5
}

fn default_tau() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaforkSection {
    pub epsilon: f64,
    pub target_count: f64,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Write per-seed event logs.
    #[serde(default)]
    pub events: bool,
}

fn default_replications() -> usize {
    1
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            replications: default_replications(),
            events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Extinction,
    Boundedness,
    Peak,
    Drift,
    IterationRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_checks")]
    pub checks: Vec<Check>,
    #[serde(default = "default_drift_epsilon")]
    pub drift_epsilon: f64,
    #[serde(default = "default_min_bin_samples")]
    pub min_bin_samples: usize,
    /// Allowed shortfall below the iteration-rate bound; three standard
    /// errors when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_slack: Option<f64>,
    #[serde(default = "default_renewal_rtol")]
    pub renewal_rtol: f64,
    /// Horizon of the dominated single-walk runs; the CIL horizon if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominated_horizon: Option<u64>,
}

fn default_checks() -> Vec<Check> {
    vec![Check::Extinction, Check::Boundedness]
}

fn default_drift_epsilon() -> f64 {
    1.0
}

fn default_min_bin_samples() -> usize {
    100
}

fn default_renewal_rtol() -> f64 {
    0.02
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            checks: default_checks(),
            drift_epsilon: default_drift_epsilon(),
            min_bin_samples: default_min_bin_samples(),
            iteration_slack: None,
            renewal_rtol: default_renewal_rtol(),
            dominated_horizon: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Subcommand run at every point.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    /// Dotted field path → values; points form the Cartesian product.
    #[serde(default)]
    pub params: BTreeMap<String, Vec<toml::Value>>,
}

impl SweepSection {
    pub fn is_empty(&self) -> bool {
        self.command.is_none() && self.params.is_empty()
    }
}

/// Everything a run needs, built from a validated config.
pub struct Resolved {
    pub graph: GraphSpec,
    pub adversary: AdversaryConfig,
    pub chain: AugmentedChain,
    pub cil: CilConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the command name and the canonical config.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn node_count(&self) -> Result<usize, CliError> {
        self.graph
            .nodes
            .ok_or_else(|| CliError::Config("graph.nodes is required".into()))
    }

    pub fn creation_probability(&self) -> Result<f64, CliError> {
        let n = self.node_count()? as f64;
        Ok(match (self.cil.q_exponent, self.cil.q) {
            (Some(a), _) => n.powf(-a),
            (None, Some(q)) => q,
            (None, None) => 1.0,
        })
    }

    pub fn replication_seed(&self, i: usize) -> u64 {
        derive_seed(self.run.seed, i as u64)
    }

    pub fn adversary_config(&self) -> Result<AdversaryConfig, CliError> {
        let nodes = &self.adversary.nodes;
        if nodes.iter().any(|&u| u == 0) {
            return Err(CliError::Config("adversary.nodes are 1-based".into()));
        }
        let zetas = match &self.adversary.zeta {
            ZetaSpec::Shared(z) => vec![*z; nodes.len()],
            ZetaSpec::PerNode(v) => {
                if v.len() != nodes.len() {
                    return Err(CliError::Config("adversary.zeta needs one entry per Pac-Man node".into()));
                }
                v.clone()
            }
        };
        let pacmen = nodes.iter().zip(zetas).map(|(&u, zeta)| PacMan { node: u - 1, zeta }).collect();
        Ok(AdversaryConfig::new(pacmen)?)
    }

    pub fn graph_spec(&self, adversary: &AdversaryConfig) -> Result<GraphSpec, CliError> {
        let g = &self.graph;
        let mut spec = if g.topology == TopologyKind::Custom {
            let path = g
                .edge_list
                .as_ref()
                .ok_or_else(|| CliError::Config("custom topology needs graph.edge_list".into()))?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let spec = GraphSpec::from_edge_list(&text)?;
            if let Some(n) = g.nodes {
                if n != spec.node_count() {
                    return Err(CliError::Config(format!("graph.nodes = {n} but the edge list has {}", spec.node_count())));
                }
            }
            spec
        } else {
            let topology = match g.topology {
                TopologyKind::Complete => Topology::Complete,
                TopologyKind::RandomRegular => Topology::RandomRegular { degree: g.degree },
                TopologyKind::Ring => Topology::Ring,
                TopologyKind::ErdosRenyi => Topology::ErdosRenyi {
                    edge_probability: g.edge_probability,
                },
                TopologyKind::Custom => unreachable!(),
            };
            let opts = GenerateOptions {
                resample_budget: g.resample_budget,
                pacman: adversary.nodes(),
            };
            generate_topology_with(topology, self.node_count()?, g.seed, &opts)?
        };
        if let Some(path) = &g.target {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            spec.set_target(GraphSpec::target_from_text(&text)?)?;
        }
        Ok(spec)
    }

    pub fn cil_config(&self, seed: u64) -> Result<CilConfig, CliError> {
        let n = self.node_count()?;
        let thresholds = match &self.cil.thresholds {
            Some(v) => Thresholds::PerNode(v.clone()),
            None => Thresholds::Uniform(self.cil.threshold),
        };
        let placement = match &self.cil.initial_nodes {
            Some(v) => {
                if v.iter().any(|&u| u == 0 || u > n) {
                    return Err(CliError::Config("cil.initial_nodes must be 1-based labels in [1, N]".into()));
                }
                Placement::Explicit(v.iter().map(|u| u - 1).collect())
            }
            None => Placement::UniformRandom,
        };
        Ok(CilConfig {
            thresholds,
            creation_probability: self.creation_probability()?,
            initial_walks: self.cil.z0,
            placement,
            horizon: self.cil.horizon,
            seed,
        })
    }

    pub fn decafork_config(&self, seed: u64) -> Result<DecaforkConfig, CliError> {
        let d = self
            .decafork
            .as_ref()
            .ok_or_else(|| CliError::Config("algorithm = \"decafork\" needs a [decafork] section".into()))?;
        let cil = self.cil_config(seed)?;
        Ok(DecaforkConfig {
            epsilon: d.epsilon,
            target_count: d.target_count,
            window: d.window,
            initial_walks: cil.initial_walks,
            placement: cil.placement,
            horizon: cil.horizon,
            seed,
        })
    }

    pub fn validate_seeds(&self) -> Result<(), CliError> {
        let max = i64::MAX as u64;
        if self.run.seed > max || self.graph.seed > max {
            return Err(CliError::Config(format!("seeds must not exceed {max}")));
        }
        Ok(())
    }

    /// Builds and validates graph, adversary, chain and CIL parameters.
    pub fn resolve(&self) -> Result<Resolved, CliError> {
        self.validate_seeds()?;
        let adversary = self.adversary_config()?;
        let graph = self.graph_spec(&adversary)?;
        adversary.validate_for(graph.node_count())?;
        let chain = augment(&metropolis_hastings(&graph), &adversary)?;
        let cil = self.cil_config(self.replication_seed(0))?;
        cil.validate(&chain)?;
        if self.run.replications == 0 {
            return Err(CliError::Config("run.replications must be at least 1".into()));
        }
        Ok(Resolved {
            graph,
            adversary,
            chain,
            cil,
        })
    }

    pub fn learn_problem(&self, graph: &GraphSpec) -> Result<(LearnProblem, StepSchedule), CliError> {
        let l = self
            .learn
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a [learn] section; the config describes a population-only run".into()))?;
        let problem = LearnProblem::synthetic(
            &SyntheticSpec {
                dim: l.dim,
                rows_per_node: l.rows_per_node,
                heterogeneity: l.heterogeneity,
                seed: l.data_seed,
            },
            graph.target().to_vec(),
        )?;
        let schedule = match l.schedule {
            ScheduleKind::Diminishing => StepSchedule::Diminishing {
                gamma0: l.gamma0,
                tau: l.tau,
            },
            ScheduleKind::Constant => StepSchedule::Constant {
                eta: l.eta.unwrap_or_else(|| 0.5 / problem.curvature().1),
            },
        };
        schedule.validate(&problem)?;
        Ok((problem, schedule))
    }

    /// Expands the sweep into `(point index, assignments, config)`. Each
    /// point gets `run.seed` from [`sweep_seed`].
    pub fn expand_sweep(&self) -> Result<Vec<SweepPoint>, CliError> {
        let mut base = toml::Value::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(t) = base.as_table_mut() {
            t.remove("sweep");
        }
        let keys: Vec<&String> = self.sweep.params.keys().collect();
        let sizes: Vec<usize> = self.sweep.params.values().map(Vec::len).collect();
        if sizes.iter().any(|&s| s == 0) {
            return Err(CliError::Config("sweep lists must be nonempty".into()));
        }
        let total: usize = sizes.iter().product();
        let mut out = Vec::with_capacity(total);
        for index in 0..total {
            let mut value = base.clone();
            let mut rem = index;
            let mut assignments = BTreeMap::new();
            // Last key varies fastest.
            let mut picks = vec![0; keys.len()];
            for k in (0..keys.len()).rev() {
                picks[k] = rem % sizes[k];
                rem /= sizes[k];
            }
            for (k, key) in keys.iter().enumerate() {
                let v = self.sweep.params[*key][picks[k]].clone();
                set_path(&mut value, key, v.clone())?;
                assignments.insert((*key).clone(), v);
            }
            set_path(&mut value, "run.seed", toml::Value::Integer(sweep_seed(self.run.seed, index) as i64))?;
            let cfg: ExperimentConfig = value
                .try_into()
                .map_err(|e: toml::de::Error| CliError::Config(format!("sweep point {index}: {e}")))?;
            out.push(SweepPoint {
                index,
                assignments,
                config: cfg,
            });
        }
        Ok(out)
    }
}

/// Seed of sweep point `index`: the derived sub-seed truncated to 63 bits,
/// since TOML integers are signed.
pub fn sweep_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64) & i64::MAX as u64
}

pub struct SweepPoint {
    pub index: usize,
    pub assignments: BTreeMap<String, toml::Value>,
    pub config: ExperimentConfig,
}

fn set_path(root: &mut toml::Value, path: &str, v: toml::Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("sweep path {path}: {p} is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert((*p).to_string(), v);
            return Ok(());
        }
        cur = table
            .entry((*p).to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}
