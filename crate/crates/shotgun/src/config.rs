//! Experiment configuration: a single JSON document describing the team,
//! the synthesis parameters and optionally a delivery graph and supervisor
//! tasks.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shotgun_core::delivery::{
    build_delivery_mdp, shortest_path_reference, DeliveryAgent, DeliveryGraph, DeliveryMdp, DeliveryParams,
};
use shotgun_core::refpol::SupervisorTask;
use shotgun_core::{Action, AgentSpec, Error as CoreError, Mdp, StationaryPolicy, TeamProblem, ToleranceSet};

/// Per-state action distributions keyed by state and action names.
pub type PolicyTable = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("MissingField: `{field}` (line {line}, column {column})")]
    MissingField { field: String, line: usize, column: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("{context}: {source}")]
    Invalid { context: String, source: CoreError },

    #[error("{context}: {message}")]
    Reference { context: String, message: String },
}

impl ConfigError {
    fn invalid(context: impl Into<String>) -> impl FnOnce(CoreError) -> ConfigError {
        let context = context.into();
        move |source| ConfigError::Invalid { context, source }
    }

    fn reference(context: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Reference { context: context.into(), message: message.into() }
    }
}

fn default_epsilon() -> f64 {
    1e-3
}
fn default_gamma_prime() -> f64 {
    1.2
}
fn default_rounds() -> u32 {
    1
}
fn default_prior() -> f64 {
    0.5
}
fn default_utility() -> f64 {
    1.0
}
fn default_p_target() -> f64 {
    DeliveryParams::default().p_target
}
fn default_p_land() -> f64 {
    DeliveryParams::default().p_land
}
fn default_iterations() -> usize {
    50
}
fn default_step() -> f64 {
    0.05
}
fn default_tau() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    WorstCase,
    Decoys,
    Refpol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub gap: f64,
    pub feas: f64,
    pub kl: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let t = ToleranceSet::default();
        Self { gap: t.gap, feas: t.feas, kl: t.kl }
    }
}

/// Inline MDP: transitions are `[state, action, next, probability]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub states: Vec<String>,
    pub actions: BTreeMap<String, Vec<String>>,
    pub transitions: Vec<(String, String, String, f64)>,
    pub initial: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedReference {
    ShortestPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Named(NamedReference),
    Table(PolicyTable),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AgentConfig {
    Mdp {
        mdp: MdpSpec,
        reference: ReferenceSpec,
        targets: Vec<String>,
        #[serde(default = "default_prior")]
        prior: f64,
        #[serde(default = "default_utility")]
        utility: f64,
    },
    /// Agent `agent` of the top-level delivery graph.
    Delivery {
        agent: usize,
        reference: ReferenceSpec,
        #[serde(default = "default_prior")]
        prior: f64,
        #[serde(default = "default_utility")]
        utility: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliveryAgentSpec {
    pub start: String,
    pub supervisor_target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliverySpec {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    pub agent_targets: Vec<String>,
    pub agents: Vec<DeliveryAgentSpec>,
    #[serde(default = "default_p_target")]
    pub p_target: f64,
    #[serde(default = "default_p_land")]
    pub p_land: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorSpec {
    /// Per-agent supervisor target states. Delivery agents default to their
    /// landed supervisor node when this is absent.
    #[serde(default)]
    pub targets: Option<Vec<Vec<String>>>,
    pub thresholds: Vec<f64>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_step")]
    pub step_size: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(rename = "nu_A")]
    pub nu_a: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub k_max: Option<f64>,
    #[serde(default = "default_gamma_prime")]
    pub gamma_prime: f64,
    #[serde(default = "default_rounds")]
    pub m_r: u32,
    #[serde(default)]
    pub delta_margin: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Supervisor elimination budget used by `simulate`.
    #[serde(default)]
    pub capacity: Option<f64>,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub delivery: Option<DeliverySpec>,
    pub agents: Vec<AgentConfig>,
    #[serde(default)]
    pub supervisor: Option<SupervisorSpec>,
}

/// A fully resolved configuration, ready for the solvers.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: TeamProblem,
    pub graph: Option<DeliveryGraph>,
    /// Generated MDP for each delivery agent, `None` for inline agents.
    pub delivery: Vec<Option<DeliveryMdp>>,
    pub task: Option<SupervisorTask>,
}

fn json_error(e: serde_json::Error) -> ConfigError {
    let (line, column) = (e.line(), e.column());
    let message = e.to_string();
    if let Some(rest) = message.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return ConfigError::MissingField { field: rest[..end].to_string(), line, column };
        }
    }
    let message = match message.rfind(" at line ") {
        Some(i) => message[..i].to_string(),
        None => message,
    };
    ConfigError::Parse { line, column, message }
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(json_error)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    /// Canonical serialization, used for hashing and embedding.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn tolerance_set(&self) -> ToleranceSet {
        ToleranceSet { gap: self.tolerances.gap, feas: self.tolerances.feas, kl: self.tolerances.kl }
    }

    /// Resolve every cross-reference and validate the models.
    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let graph = match &self.delivery {
            Some(d) => {
                let g = DeliveryGraph {
                    nodes: d.nodes.clone(),
                    edges: d.edges.clone(),
                    agent_targets: d.agent_targets.clone(),
                    agents: d
                        .agents
                        .iter()
                        .map(|a| DeliveryAgent { start: a.start.clone(), supervisor_target: a.supervisor_target.clone() })
                        .collect(),
                };
                g.validate().map_err(ConfigError::invalid("delivery"))?;
                let params = DeliveryParams { p_target: d.p_target, p_land: d.p_land };
                params.validate().map_err(ConfigError::invalid("delivery"))?;
                Some((g, params))
            }
            None => None,
        };
        if self.agents.is_empty() {
            return Err(ConfigError::reference("agents", "at least one agent is required"));
        }
        let mut specs = Vec::with_capacity(self.agents.len());
        let mut delivery = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let ctx = format!("agent {i}");
            match agent {
                AgentConfig::Mdp { mdp, reference, targets, prior, utility } => {
                    let m = build_mdp(mdp).map_err(ConfigError::invalid(format!("{ctx} mdp")))?;
                    let pol = match reference {
                        ReferenceSpec::Table(t) => {
                            policy_from_table(&m, t).map_err(ConfigError::invalid(format!("{ctx} reference")))?
                        }
                        ReferenceSpec::Named(NamedReference::ShortestPath) => {
                            return Err(ConfigError::reference(
                                format!("{ctx} reference"),
                                "shortest_path is only available for delivery agents",
                            ))
                        }
                    };
                    let targets = m
                        .resolve_states(targets.iter().map(String::as_str))
                        .map_err(ConfigError::invalid(format!("{ctx} targets")))?;
                    check_prior(&ctx, *prior, *utility)?;
                    let spec = AgentSpec::new(m, pol, targets, *prior, *utility).map_err(ConfigError::invalid(&ctx))?;
                    specs.push(spec);
                    delivery.push(None);
                }
                AgentConfig::Delivery { agent: idx, reference, prior, utility } => {
                    let (g, params) = graph
                        .as_ref()
                        .ok_or_else(|| ConfigError::reference(&ctx, "delivery agent needs a top-level `delivery` graph"))?;
                    if *idx >= g.agents.len() {
                        return Err(ConfigError::reference(
                            &ctx,
                            format!("delivery agent index {idx} out of range ({} agents)", g.agents.len()),
                        ));
                    }
                    let dm = build_delivery_mdp(g, *params, *idx).map_err(ConfigError::invalid(&ctx))?;
                    let pol = match reference {
                        ReferenceSpec::Named(NamedReference::ShortestPath) => {
                            shortest_path_reference(&dm, g, *idx).map_err(ConfigError::invalid(format!("{ctx} reference")))?
                        }
                        ReferenceSpec::Table(t) => {
                            policy_from_table(&dm.mdp, t).map_err(ConfigError::invalid(format!("{ctx} reference")))?
                        }
                    };
                    check_prior(&ctx, *prior, *utility)?;
                    let spec = AgentSpec::new(dm.mdp.clone(), pol, dm.agent_targets.clone(), *prior, *utility)
                        .map_err(ConfigError::invalid(&ctx))?;
                    specs.push(spec);
                    delivery.push(Some(dm));
                }
            }
        }
        let mut problem = TeamProblem::new(specs, self.nu_a);
        problem.epsilon = self.epsilon;
        problem.k_max = self.k_max;
        problem.gamma_prime = self.gamma_prime;
        problem.m_r = self.m_r;
        problem.delta_margin = self.delta_margin;
        problem.tol = self.tolerance_set();
        problem.validate().map_err(ConfigError::invalid("parameters"))?;
        if let Some(c) = self.capacity {
            if !(c >= 0.0) {
                return Err(ConfigError::reference("capacity", format!("{c} must be nonnegative")));
            }
        }
        let task = match &self.supervisor {
            Some(sup) => Some(self.build_task(sup, &problem, &delivery)?),
            None => None,
        };
        Ok(Experiment { config: self.clone(), problem, graph: graph.map(|g| g.0), delivery, task })
    }

    fn build_task(
        &self,
        sup: &SupervisorSpec,
        problem: &TeamProblem,
        delivery: &[Option<DeliveryMdp>],
    ) -> Result<SupervisorTask, ConfigError> {
        let n = problem.agents.len();
        let targets = match &sup.targets {
            Some(t) => {
                if t.len() != n {
                    return Err(ConfigError::reference(
                        "supervisor.targets",
                        format!("expected {n} target lists, got {}", t.len()),
                    ));
                }
                t.iter()
                    .enumerate()
                    .map(|(i, names)| {
                        problem.agents[i]
                            .mdp
                            .resolve_states(names.iter().map(String::as_str))
                            .map_err(ConfigError::invalid(format!("supervisor target of agent {i}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            }
            None => delivery
                .iter()
                .enumerate()
                .map(|(i, d)| {
                    d.as_ref().map(|d| vec![d.supervisor_target]).ok_or_else(|| {
                        ConfigError::reference("supervisor.targets", format!("agent {i} is not a delivery agent"))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut task = SupervisorTask::new(targets, sup.thresholds.clone());
        task.iterations = sup.iterations;
        task.step_size = sup.step_size;
        task.tau = sup.tau;
        task.validate(n).map_err(ConfigError::invalid("supervisor"))?;
        Ok(task)
    }
}

fn check_prior(ctx: &str, prior: f64, utility: f64) -> Result<(), ConfigError> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(ConfigError::reference(ctx, format!("prior {prior} must lie in (0, 1)")));
    }
    if !(utility >= 0.0) || !utility.is_finite() {
        return Err(ConfigError::reference(ctx, format!("utility {utility} must be nonnegative")));
    }
    Ok(())
}

/// Build and validate an MDP from its interchange form.
pub fn build_mdp(spec: &MdpSpec) -> Result<Mdp, CoreError> {
    let index: BTreeMap<&str, usize> = spec.states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != spec.states.len() {
        return Err(CoreError::InvalidParams("duplicate state names".into()));
    }
    for s in spec.actions.keys() {
        if !index.contains_key(s.as_str()) {
            return Err(CoreError::UnknownState(s.clone()));
        }
    }
    let mut actions: Vec<Vec<Action>> = spec
        .states
        .iter()
        .map(|s| {
            spec.actions
                .get(s)
                .map(|names| names.iter().map(|a| Action::new(a.clone(), [])).collect())
                .unwrap_or_default()
        })
        .collect();
    for (s, a, q, p) in &spec.transitions {
        let si = *index.get(s.as_str()).ok_or_else(|| CoreError::UnknownState(s.clone()))?;
        let qi = *index.get(q.as_str()).ok_or_else(|| CoreError::UnknownState(q.clone()))?;
        let act = actions[si]
            .iter_mut()
            .find(|x| &x.name == a)
            .ok_or_else(|| CoreError::UnknownAction { state: s.clone(), action: a.clone() })?;
        if !(0.0..=1.0).contains(p) {
            return Err(CoreError::InvalidProbability { state: s.clone(), action: a.clone(), value: *p });
        }
        if act.successors.iter().any(|e| e.0 == qi) {
            return Err(CoreError::InvalidParams(format!("duplicate transition ({s}, {a}, {q})")));
        }
        if *p > 0.0 {
            act.successors.push((qi, *p));
        }
    }
    let initial = *index.get(spec.initial.as_str()).ok_or_else(|| CoreError::UnknownState(spec.initial.clone()))?;
    Mdp::new(spec.states.clone(), actions, initial)
}

/// Convert a policy table. Absorbing states may be omitted and default to
/// their first action.
pub fn policy_from_table(m: &Mdp, table: &PolicyTable) -> Result<StationaryPolicy, CoreError> {
    for s in table.keys() {
        if m.state_index(s).is_none() {
            return Err(CoreError::UnknownState(s.clone()));
        }
    }
    let mut rows = Vec::with_capacity(m.num_states());
    for s in 0..m.num_states() {
        let name = m.state_name(s);
        let mut row = vec![0.0; m.actions(s).len()];
        match table.get(name) {
            Some(dist) => {
                for (a, &p) in dist {
                    let ai = m
                        .action_index(s, a)
                        .ok_or_else(|| CoreError::UnknownAction { state: name.to_string(), action: a.clone() })?;
                    row[ai] = p;
                }
            }
            None if m.is_absorbing(s) => row[0] = 1.0,
            None => {
                return Err(CoreError::PolicyMismatch { state: name.to_string(), reason: "no distribution given" });
            }
        }
        rows.push(row);
    }
    let pol = StationaryPolicy::new(rows);
    pol.validate_for(m)?;
    Ok(pol)
}

/// Policy table listing every state and action, zeros included.
pub fn policy_to_table(m: &Mdp, pol: &StationaryPolicy) -> PolicyTable {
    (0..m.num_states())
        .map(|s| {
            let dist = m.actions(s).iter().enumerate().map(|(a, act)| (act.name.clone(), pol.prob(s, a))).collect();
            (m.state_name(s).to_string(), dist)
        })
        .collect()
}
