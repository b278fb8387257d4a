//! Occupancy measures over the deviation set and the quantities defined on
//! them: flow residuals, reach, and path-level KL divergence.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{induced_chain, Decomposition};
use crate::linalg::solve_fixed_point_transposed;
use crate::math::{ln, xlogxy};
use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::{Error, Result};

/// Entries below this are treated as zero before normalizing.
pub const CLIP: f64 = 1e-12;
const NEG_TOL: f64 = 1e-9;

/// Expected state-action visit counts `x[s][a]` for `s` in `S_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyVector {
    deviation_states: Vec<StateId>,
    entries: Vec<Vec<f64>>,
}

impl OccupancyVector {
    /// `entries[i]` is indexed by the actions of `deviation_states[i]`.
    pub fn new(deviation_states: Vec<StateId>, entries: Vec<Vec<f64>>) -> Self {
        Self { deviation_states, entries }
    }

    pub fn zeros(m: &Mdp, dec: &Decomposition) -> Self {
        let states = dec.deviation_states().to_vec();
        let entries = states.iter().map(|&s| vec![0.0; m.actions(s).len()]).collect();
        Self::new(states, entries)
    }

    pub fn deviation_states(&self) -> &[StateId] {
        &self.deviation_states
    }

    pub fn entries(&self) -> &[Vec<f64>] {
        &self.entries
    }

    pub fn position(&self, s: StateId) -> Option<usize> {
        self.deviation_states.binary_search(&s).ok()
    }

    pub fn get(&self, s: StateId, a: usize) -> f64 {
        self.position(s).map_or(0.0, |i| self.entries[i][a])
    }

    /// `sum_a x[s][a]`, the expected number of visits to `s`.
    pub fn state_mass(&self, s: StateId) -> f64 {
        self.position(s).map_or(0.0, |i| self.entries[i].iter().sum())
    }

    /// State-to-state flows `x_{s,q} = sum_a x[s][a] P(s,a,q)` out of `s`.
    pub fn flows(&self, m: &Mdp, s: StateId) -> Vec<(StateId, f64)> {
        let Some(i) = self.position(s) else {
            return Vec::new();
        };
        let mut out: Vec<(StateId, f64)> = Vec::new();
        for (a, act) in m.actions(s).iter().enumerate() {
            let xa = self.entries[i][a];
            if xa == 0.0 {
                continue;
            }
            for &(q, p) in &act.successors {
                match out.iter_mut().find(|e| e.0 == q) {
                    Some(e) => e.1 += xa * p,
                    None => out.push((q, xa * p)),
                }
            }
        }
        out.sort_by_key(|e| e.0);
        out
    }

    /// Flow conservation residuals, one per deviation state.
    pub fn flow_residuals(&self, m: &Mdp) -> Vec<f64> {
        let mut res: Vec<f64> = self.entries.iter().map(|r| r.iter().sum()).collect();
        for (i, &s) in self.deviation_states.iter().enumerate() {
            if s == m.initial() {
                res[i] -= 1.0;
            }
        }
        for &s in &self.deviation_states {
            for (q, f) in self.flows(m, s) {
                if let Some(j) = self.position(q) {
                    res[j] -= f;
                }
            }
        }
        res
    }

    /// Probability of reaching `targets`, read off the flows into them.
    pub fn reach(&self, m: &Mdp, targets: &[StateId]) -> f64 {
        if targets.contains(&m.initial()) {
            return 1.0;
        }
        let mut total = 0.0;
        for &s in &self.deviation_states {
            for (q, f) in self.flows(m, s) {
                if targets.contains(&q) {
                    total += f;
                }
            }
        }
        total
    }
}

/// Expected visit counts of `pol` over `S_d`.
pub fn occupancy_from_policy(m: &Mdp, pol: &StationaryPolicy, dec: &Decomposition) -> Result<OccupancyVector> {
    let chain = induced_chain(m, pol)?;
    let mut x = OccupancyVector::zeros(m, dec);
    let s0 = m.initial();
    if dec.position(s0).is_none() {
        return Ok(x);
    }
    let in_sd = |s: StateId| dec.position(s).is_some();
    let seen = chain.reachable_from(s0, in_sd);
    let outside: Vec<bool> = (0..m.num_states()).map(|s| !in_sd(s)).collect();
    let escapes = chain.can_reach(&outside);
    let live: Vec<StateId> = dec
        .deviation_states()
        .iter()
        .copied()
        .filter(|&s| seen[s])
        .collect();
    if let Some(&s) = live.iter().find(|&&s| !escapes[s]) {
        return Err(Error::InfiniteOccupancy(m.state_name(s).to_string()));
    }
    let idx = |s: StateId| live.binary_search(&s).ok();
    let rows: Vec<Vec<(usize, f64)>> = live
        .iter()
        .map(|&s| chain.row(s).iter().filter_map(|&(q, p)| idx(q).map(|j| (j, p))).collect())
        .collect();
    let b: Vec<f64> = live.iter().map(|&s| if s == s0 { 1.0 } else { 0.0 }).collect();
    let y = solve_fixed_point_transposed(&rows, &b)
        .ok_or_else(|| Error::InfiniteOccupancy(m.state_name(s0).to_string()))?;
    for (k, &s) in live.iter().enumerate() {
        let i = dec.position(s).unwrap();
        let visits = y[k].max(0.0);
        for (a, e) in x.entries[i].iter_mut().enumerate() {
            *e = visits * pol.prob(s, a);
        }
    }
    Ok(x)
}

/// Normalize occupancy into a policy; states without mass keep the reference.
pub fn policy_from_occupancy(m: &Mdp, x: &OccupancyVector, reference: &StationaryPolicy) -> Result<StationaryPolicy> {
    let mut pol = reference.clone();
    for (i, &s) in x.deviation_states.iter().enumerate() {
        let mut row = x.entries[i].clone();
        for (a, v) in row.iter_mut().enumerate() {
            if *v < -NEG_TOL || !v.is_finite() {
                return Err(Error::NegativeEntry {
                    state: m.state_name(s).to_string(),
                    action: m.actions(s)[a].name.clone(),
                    value: *v,
                });
            }
            if *v < CLIP {
                *v = 0.0;
            }
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            for v in row.iter_mut() {
                *v /= total;
            }
            pol.set_dist(s, row);
        }
    }
    Ok(pol)
}

/// Path-level KL divergence of the behavior encoded by `x` from `reference`,
/// `+inf` when `x` puts mass on a transition the reference never takes.
pub fn kl_occupancy(m: &Mdp, x: &OccupancyVector, reference: &StationaryPolicy) -> f64 {
    let mut kl = 0.0;
    for &s in &x.deviation_states {
        let mass = x.state_mass(s);
        if mass <= 0.0 {
            continue;
        }
        for (q, f) in x.flows(m, s) {
            if f <= 0.0 {
                continue;
            }
            let r = reference_prob(m, reference, s, q);
            kl += xlogxy(f, r * mass);
        }
    }
    kl.max(0.0)
}

/// `pi_{s,q}` of the chain induced by `pol`.
pub fn reference_prob(m: &Mdp, pol: &StationaryPolicy, s: StateId, q: StateId) -> f64 {
    m.actions(s)
        .iter()
        .enumerate()
        .map(|(a, act)| pol.prob(s, a) * act.prob_to(q))
        .sum()
}

/// KL divergence between the path distributions of `pol` and `reference`.
pub fn policy_kl(m: &Mdp, pol: &StationaryPolicy, reference: &StationaryPolicy, dec: &Decomposition) -> Result<f64> {
    let x = occupancy_from_policy(m, pol, dec)?;
    Ok(kl_occupancy(m, &x, reference))
}

/// Per-state KL of one step, `sum_q p_q ln(p_q / r_q)`.
pub fn step_kl(p: &[(StateId, f64)], r: &[(StateId, f64)]) -> f64 {
    let mut kl = 0.0;
    for &(q, pq) in p {
        if pq <= 0.0 {
            continue;
        }
        let rq = r.iter().find(|e| e.0 == q).map_or(0.0, |e| e.1);
        if rq <= 0.0 {
            return f64::INFINITY;
        }
        kl += pq * ln(pq / rq);
    }
    kl
}
