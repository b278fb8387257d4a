//! Finite MDPs and stationary policies.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

pub type StateId = usize;

/// Row sums must match 1 within this tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// A named action with a sparse successor row, sorted by state and merged.
#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub name: String,
    pub successors: Vec<(StateId, f64)>,
}

impl Action {
    pub fn new(name: impl Into<String>, successors: impl IntoIterator<Item = (StateId, f64)>) -> Self {
        Self {
            name: name.into(),
            successors: merge_row(successors),
        }
    }

    pub fn prob_to(&self, q: StateId) -> f64 {
        match self.successors.binary_search_by_key(&q, |&(s, _)| s) {
            Ok(i) => self.successors[i].1,
            Err(_) => 0.0,
        }
    }
}

fn merge_row(entries: impl IntoIterator<Item = (StateId, f64)>) -> Vec<(StateId, f64)> {
    let mut row: BTreeMap<StateId, f64> = BTreeMap::new();
    for (q, p) in entries {
        *row.entry(q).or_insert(0.0) += p;
    }
    row.into_iter().filter(|&(_, p)| p != 0.0).collect()
}

/// A finite MDP `(S, A, P, s0)` with per-state action sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    names: Vec<String>,
    actions: Vec<Vec<Action>>,
    initial: StateId,
}

impl Mdp {
    /// Assemble an MDP without checking its invariants; see [`Mdp::validate`].
    pub fn from_parts(names: Vec<String>, actions: Vec<Vec<Action>>, initial: StateId) -> Self {
        Self { names, actions, initial }
    }

    /// Assemble and validate.
    pub fn new(names: Vec<String>, actions: Vec<Vec<Action>>, initial: StateId) -> Result<Self> {
        let m = Self::from_parts(names, actions, initial);
        m.validate()?;
        Ok(m)
    }

    /// Check every structural invariant: known states, non-empty action sets,
    /// probabilities in `[0, 1]` and rows summing to 1.
    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if self.actions.len() != n {
            return Err(Error::InvalidParams("action table length differs from state count".to_string()));
        }
        if self.initial >= n {
            return Err(Error::UnknownState(alloc::format!("#{}", self.initial)));
        }
        for (s, acts) in self.actions.iter().enumerate() {
            if acts.is_empty() {
                return Err(Error::EmptyActionSet { state: self.names[s].clone() });
            }
            for a in acts {
                let mut sum = 0.0;
                for &(q, p) in &a.successors {
                    if q >= n {
                        return Err(Error::UnknownState(alloc::format!("#{q}")));
                    }
                    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                        return Err(Error::InvalidProbability {
                            state: self.names[s].clone(),
                            action: a.name.clone(),
                            value: p,
                        });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::RowNotStochastic {
                        state: self.names[s].clone(),
                        action: a.name.clone(),
                        sum,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.names.len()
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn state_name(&self, s: StateId) -> &str {
        &self.names[s]
    }

    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    pub fn state_index(&self, name: &str) -> Option<StateId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn actions(&self, s: StateId) -> &[Action] {
        &self.actions[s]
    }

    pub fn action_index(&self, s: StateId, name: &str) -> Option<usize> {
        self.actions[s].iter().position(|a| a.name == name)
    }

    pub fn transition(&self, s: StateId, a: usize, q: StateId) -> f64 {
        self.actions[s][a].prob_to(q)
    }

    /// `Succ(s)`: states reachable in one step under some action.
    pub fn successors(&self, s: StateId) -> Vec<StateId> {
        let mut out: Vec<StateId> = self.actions[s]
            .iter()
            .flat_map(|a| a.successors.iter().filter(|e| e.1 > 0.0).map(|e| e.0))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// A state is absorbing when `Succ(s) = {s}`.
    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.actions[s]
            .iter()
            .all(|a| a.successors.iter().all(|&(q, p)| q == s || p == 0.0))
    }

    /// Resolve state names, failing on the first unknown one.
    pub fn resolve_states<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<Vec<StateId>> {
        names
            .into_iter()
            .map(|n| self.state_index(n).ok_or_else(|| Error::UnknownState(n.to_string())))
            .collect()
    }
}

/// Builds an [`Mdp`] from named states, actions and `(s, a, q, p)` triples.
#[derive(Debug, Default, Clone)]
pub struct MdpBuilder {
    names: Vec<String>,
    actions: Vec<Vec<(String, Vec<(StateId, f64)>)>>,
    initial: Option<StateId>,
}

impl MdpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add a state (idempotent) and return its id.
    pub fn state(&mut self, name: &str) -> StateId {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return i;
        }
        self.names.push(name.to_string());
        self.actions.push(Vec::new());
        self.names.len() - 1
    }

    /// Declare an action at `state`, creating an empty row if new.
    pub fn action(&mut self, state: &str, action: &str) -> Result<&mut Self> {
        let s = self.lookup(state)?;
        if !self.actions[s].iter().any(|(n, _)| n == action) {
            self.actions[s].push((action.to_string(), Vec::new()));
        }
        Ok(self)
    }

    pub fn transition(&mut self, state: &str, action: &str, next: &str, p: f64) -> Result<&mut Self> {
        let s = self.lookup(state)?;
        let q = self.lookup(next)?;
        self.action(state, action)?;
        let row = self.actions[s].iter_mut().find(|(n, _)| n == action).expect("declared above");
        row.1.push((q, p));
        Ok(self)
    }

    /// A self-loop action making `state` absorbing.
    pub fn absorbing(&mut self, state: &str, action: &str) -> Result<&mut Self> {
        self.transition(state, action, state, 1.0)
    }

    pub fn initial(&mut self, state: &str) -> Result<&mut Self> {
        self.initial = Some(self.lookup(state)?);
        Ok(self)
    }

    fn lookup(&self, name: &str) -> Result<StateId> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    /// Finish without validation.
    pub fn build_unchecked(self) -> Result<Mdp> {
        let initial = self
            .initial
            .ok_or_else(|| Error::InvalidParams("initial state not set".to_string()))?;
        let actions = self
            .actions
            .into_iter()
            .map(|acts| acts.into_iter().map(|(n, row)| Action::new(n, row)).collect())
            .collect();
        Ok(Mdp::from_parts(self.names, actions, initial))
    }

    pub fn build(self) -> Result<Mdp> {
        let m = self.build_unchecked()?;
        m.validate()?;
        Ok(m)
    }
}

/// A stationary randomized policy: one action distribution per state,
/// indexed like [`Mdp::actions`].
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPolicy {
    probs: Vec<Vec<f64>>,
}

impl StationaryPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Self {
        Self { probs }
    }

    /// Deterministic policy taking `choices[s]` at each state.
    pub fn deterministic(m: &Mdp, choices: &[usize]) -> Self {
        let probs = (0..m.num_states())
            .map(|s| {
                let mut d = vec![0.0; m.actions(s).len()];
                d[choices[s]] = 1.0;
                d
            })
            .collect();
        Self { probs }
    }

    /// Deterministic policy from `(state, action)` names; unlisted states take
    /// their first action.
    pub fn deterministic_named(m: &Mdp, choices: &[(&str, &str)]) -> Result<Self> {
        let mut idx = vec![0usize; m.num_states()];
        for &(s, a) in choices {
            let si = m.state_index(s).ok_or_else(|| Error::UnknownState(s.to_string()))?;
            idx[si] = m.action_index(si, a).ok_or_else(|| Error::UnknownAction {
                state: s.to_string(),
                action: a.to_string(),
            })?;
        }
        Ok(Self::deterministic(m, &idx))
    }

    pub fn uniform(m: &Mdp) -> Self {
        let probs = (0..m.num_states())
            .map(|s| {
                let k = m.actions(s).len();
                vec![1.0 / k as f64; k]
            })
            .collect();
        Self { probs }
    }

    pub fn validate_for(&self, m: &Mdp) -> Result<()> {
        if self.probs.len() != m.num_states() {
            return Err(Error::PolicyMismatch {
                state: String::from("*"),
                reason: "state count differs",
            });
        }
        for (s, d) in self.probs.iter().enumerate() {
            let mismatch = |reason| Error::PolicyMismatch {
                state: m.state_name(s).to_string(),
                reason,
            };
            if d.len() != m.actions(s).len() {
                return Err(mismatch("action count differs"));
            }
            if d.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(mismatch("negative or non-finite probability"));
            }
            let sum: f64 = d.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(mismatch("distribution does not sum to 1"));
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, s: StateId, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn dist(&self, s: StateId) -> &[f64] {
        &self.probs[s]
    }

    pub fn set_dist(&mut self, s: StateId, dist: Vec<f64>) {
        self.probs[s] = dist;
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    /// Per-state mixture `lambda * other + (1 - lambda) * self`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Self {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| (1.0 - lambda) * x + lambda * y).collect())
            .collect();
        Self { probs }
    }

    /// Largest absolute difference between two policies over the given states.
    pub fn max_abs_diff(&self, other: &Self, states: impl IntoIterator<Item = StateId>) -> f64 {
        states
            .into_iter()
            .flat_map(|s| self.probs[s].iter().zip(&other.probs[s]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// The two-agent aerial delivery example used throughout the tests.
pub mod fixtures {
    use super::*;

    /// The two-agent aerial delivery MDP: states 1, 2, 3, 4, * with actions
    /// r, d at 1 and r, land at 2.
    pub fn running_example() -> Mdp {
        let mut b = MdpBuilder::new();
        for s in ["1", "2", "3", "4", "*"] {
            b.state(s);
        }
        b.transition("1", "r", "2", 0.9).unwrap();
        b.transition("1", "r", "4", 0.1).unwrap();
        b.transition("1", "d", "2", 0.1).unwrap();
        b.transition("1", "d", "4", 0.9).unwrap();
        b.transition("2", "r", "3", 0.8).unwrap();
        b.transition("2", "r", "*", 0.2).unwrap();
        b.transition("2", "land", "*", 1.0).unwrap();
        for s in ["3", "4", "*"] {
            b.absorbing(s, "stay").unwrap();
        }
        b.initial("1").unwrap();
        b.build().unwrap()
    }

    pub fn reference_1(m: &Mdp) -> StationaryPolicy {
        StationaryPolicy::deterministic_named(m, &[("1", "r"), ("2", "r")]).unwrap()
    }

    pub fn reference_2(m: &Mdp) -> StationaryPolicy {
        StationaryPolicy::deterministic_named(m, &[("1", "d"), ("2", "r")]).unwrap()
    }

    pub fn land_policy(m: &Mdp) -> StationaryPolicy {
        StationaryPolicy::deterministic_named(m, &[("1", "r"), ("2", "land")]).unwrap()
    }
}
