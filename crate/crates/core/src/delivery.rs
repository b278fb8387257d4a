//! Package-delivery MDPs generated from an undirected graph.
//!
//! Each node `v` yields a flight state `v:0` and an absorbing landed state
//! `v:1`. Flying toward a neighbor succeeds with probability `p_target`,
//! forces a landing in place with probability `p_land`, and otherwise drifts
//! to one of the other neighbors.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::chain::induced_chain;
use crate::linalg::solve_fixed_point_transposed;
use crate::mdp::{Action, Mdp, StateId, StationaryPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryAgent {
    pub start: String,
    pub supervisor_target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryGraph {
    pub nodes: Vec<String>,
    pub edges: Vec<(String, String)>,
    /// The nodes `N` where agents covertly want to land.
    pub agent_targets: Vec<String>,
    pub agents: Vec<DeliveryAgent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeliveryParams {
    pub p_target: f64,
    pub p_land: f64,
}

impl Default for DeliveryParams {
    fn default() -> Self {
        Self { p_target: 0.8, p_land: 0.05 }
    }
}

impl DeliveryParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_target) || !ok(self.p_land) || self.p_target + self.p_land > 1.0 + 1e-12 {
            return Err(Error::InvalidParams(format!(
                "p_target = {}, p_land = {} must be probabilities with sum at most 1",
                self.p_target, self.p_land
            )));
        }
        Ok(())
    }
}

impl DeliveryGraph {
    /// Sorted adjacency lists, indexed like `nodes`.
    pub fn adjacency(&self) -> Result<Vec<Vec<usize>>> {
        let index = self.index()?;
        let mut adj: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); self.nodes.len()];
        for (a, b) in &self.edges {
            let (ia, ib) = (self.lookup(&index, a)?, self.lookup(&index, b)?);
            if ia == ib {
                return Err(Error::InvalidGraph(format!("self-loop at {a}")));
            }
            adj[ia].insert(b.as_str());
            adj[ib].insert(a.as_str());
        }
        Ok(adj
            .into_iter()
            .map(|set| set.into_iter().map(|name| index[name]).collect())
            .collect())
    }

    fn index(&self) -> Result<BTreeMap<&str, usize>> {
        let mut index = BTreeMap::new();
        for (i, v) in self.nodes.iter().enumerate() {
            if index.insert(v.as_str(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node {v}")));
            }
        }
        Ok(index)
    }

    fn lookup(&self, index: &BTreeMap<&str, usize>, name: &str) -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidGraph(format!("unknown node {name}")))
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.lookup(&self.index()?, name)
    }

    pub fn validate(&self) -> Result<()> {
        let adj = self.adjacency()?;
        if self.nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        if let Some(v) = (0..adj.len()).find(|&v| adj[v].is_empty()) {
            return Err(Error::InvalidGraph(format!("node {} has no neighbors", self.nodes[v])));
        }
        let mut seen = vec![false; adj.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidGraph(format!("node {} is disconnected", self.nodes[v])));
        }
        for t in &self.agent_targets {
            self.node_index(t)?;
        }
        for a in &self.agents {
            self.node_index(&a.start)?;
            self.node_index(&a.supervisor_target)?;
        }
        Ok(())
    }
}

/// A generated delivery MDP and the state sets of interest.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryMdp {
    pub mdp: Mdp,
    /// Landed states at the agent target nodes.
    pub agent_targets: Vec<StateId>,
    /// Landed state at the agent's supervisor target.
    pub supervisor_target: StateId,
    pub num_nodes: usize,
}

impl DeliveryMdp {
    pub fn flight(&self, v: usize) -> StateId {
        v
    }

    pub fn landed(&self, v: usize) -> StateId {
        self.num_nodes + v
    }
}

/// Build the MDP seen by `agent`.
pub fn build_delivery_mdp(g: &DeliveryGraph, params: DeliveryParams, agent: usize) -> Result<DeliveryMdp> {
    params.validate()?;
    g.validate()?;
    let spec = g
        .agents
        .get(agent)
        .ok_or_else(|| Error::InvalidParams(format!("no agent {agent} in delivery graph")))?;
    let adj = g.adjacency()?;
    let n = g.nodes.len();
    let (pt, pl) = (params.p_target, params.p_land);
    let rest = (1.0 - pt - pl).max(0.0);
    let mut names = Vec::with_capacity(2 * n);
    names.extend(g.nodes.iter().map(|v| format!("{v}:0")));
    names.extend(g.nodes.iter().map(|v| format!("{v}:1")));
    let mut actions: Vec<Vec<Action>> = Vec::with_capacity(2 * n);
    for v in 0..n {
        let d = adj[v].len();
        let mut acts = Vec::with_capacity(d + 1);
        for &u in &adj[v] {
            let mut succ = vec![(u, pt), (n + v, pl)];
            if d == 1 {
                succ[1].1 += rest;
            } else {
                let share = rest / (d - 1) as f64;
                succ.extend(adj[v].iter().filter(|&&w| w != u).map(|&w| (w, share)));
            }
            succ.retain(|e| e.1 > 0.0);
            acts.push(Action::new(format!("to:{}", g.nodes[u]), succ));
        }
        let mut land = vec![(n + v, pt + pl)];
        land.extend(adj[v].iter().map(|&u| (u, rest / d as f64)));
        land.retain(|e| e.1 > 0.0);
        acts.push(Action::new("land", land));
        actions.push(acts);
    }
    for v in 0..n {
        actions.push(vec![Action::new("stay", [(n + v, 1.0)])]);
    }
    let start = g.node_index(&spec.start)?;
    let mdp = Mdp::new(names, actions, start)?;
    let mut agent_targets: Vec<StateId> = g
        .agent_targets
        .iter()
        .map(|t| g.node_index(t).map(|v| n + v))
        .collect::<Result<_>>()?;
    agent_targets.sort_unstable();
    agent_targets.dedup();
    Ok(DeliveryMdp {
        mdp,
        agent_targets,
        supervisor_target: n + g.node_index(&spec.supervisor_target)?,
        num_nodes: n,
    })
}

/// Move along a breadth-first shortest path to the supervisor target and
/// land there. Ties go to the lexicographically smallest neighbor.
pub fn shortest_path_reference(dm: &DeliveryMdp, g: &DeliveryGraph, agent: usize) -> Result<StationaryPolicy> {
    let spec = g
        .agents
        .get(agent)
        .ok_or_else(|| Error::InvalidParams(format!("no agent {agent} in delivery graph")))?;
    let adj = g.adjacency()?;
    let n = g.nodes.len();
    let target = g.node_index(&spec.supervisor_target)?;
    let mut dist = vec![usize::MAX; n];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    let start = g.node_index(&spec.start)?;
    if dist[start] == usize::MAX {
        return Err(Error::UnreachableTarget(agent));
    }
    let m = &dm.mdp;
    let mut choice = vec![0usize; 2 * n];
    for v in 0..n {
        let land = adj[v].len();
        choice[v] = if v == target || dist[v] == usize::MAX {
            land
        } else {
            // adjacency is sorted by name, so the first closer neighbor wins
            adj[v]
                .iter()
                .position(|&u| dist[u] != usize::MAX && dist[u] + 1 == dist[v])
                .unwrap_or(land)
        };
    }
    Ok(StationaryPolicy::deterministic(m, &choice))
}

/// Per-node heat values: expected visits to the flight state and the
/// probability of landing at the node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeHeat {
    pub node: String,
    pub flight_occupancy: f64,
    pub landed_flow: f64,
}

pub fn node_heat(dm: &DeliveryMdp, g: &DeliveryGraph, pol: &StationaryPolicy) -> Result<Vec<NodeHeat>> {
    let chain = induced_chain(&dm.mdp, pol)?;
    let n = dm.num_nodes;
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|v| chain.row(v).iter().filter(|e| e.0 < n).copied().collect())
        .collect();
    let s0 = dm.mdp.initial();
    let mut b = vec![0.0; n];
    let mut landed = vec![0.0; n];
    if s0 < n {
        b[s0] = 1.0;
    } else {
        landed[s0 - n] = 1.0;
    }
    let visits = solve_fixed_point_transposed(&rows, &b)
        .ok_or_else(|| Error::InfiniteOccupancy(dm.mdp.state_name(s0).to_string()))?;
    for v in 0..n {
        for &(q, p) in chain.row(v) {
            if q >= n {
                landed[q - n] += visits[v] * p;
            }
        }
    }
    Ok((0..n)
        .map(|v| NodeHeat {
            node: g.nodes[v].clone(),
            flight_occupancy: visits[v].max(0.0),
            landed_flow: landed[v],
        })
        .collect())
}
