//! The single-agent subproblem: maximize the probability of reaching the
//! agent's targets subject to a KL budget, posed as an exponential-cone
//! program over occupancy measures.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{decompose, induced_chain, Decomposition, StateRole};
use crate::conic::{Cone, ConicProgram, ConicSolver, SolveStatus, ToleranceSet};
use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::occupancy::{kl_occupancy, occupancy_from_policy, policy_from_occupancy, OccupancyVector};
use crate::reach::{disjunctive_reach, mask, max_reach, Choice};
use crate::{Error, Result};

/// The most capable behavior an agent has without ever taking a transition
/// its reference forbids.
#[derive(Debug, Clone, PartialEq)]
pub struct Ceiling {
    pub policy: StationaryPolicy,
    pub reach: f64,
    pub kl: f64,
}

/// One agent of the team.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub mdp: Mdp,
    pub reference: StationaryPolicy,
    pub targets: Vec<StateId>,
    /// Prior probability that the agent is deceptive.
    pub prior: f64,
    pub utility: f64,
    decomposition: Decomposition,
    /// Actions whose every successor has positive reference probability.
    admissible: Vec<Vec<usize>>,
    reference_reach: f64,
    ceiling: Ceiling,
}

impl AgentSpec {
    pub fn new(mdp: Mdp, reference: StationaryPolicy, targets: Vec<StateId>, prior: f64, utility: f64) -> Result<Self> {
        mdp.validate()?;
        reference.validate_for(&mdp)?;
        if !(prior > 0.0 && prior < 1.0) {
            return Err(Error::InvalidParams(format!("prior {prior} outside (0, 1)")));
        }
        if !(utility >= 0.0) {
            return Err(Error::InvalidParams(format!("utility {utility} is negative")));
        }
        let decomposition = decompose(&mdp, &reference, &targets)?;
        let chain = induced_chain(&mdp, &reference)?;
        let admissible = (0..mdp.num_states())
            .map(|s| {
                (0..mdp.actions(s).len())
                    .filter(|&a| {
                        mdp.actions(s)[a]
                            .successors
                            .iter()
                            .all(|&(q, p)| p <= 0.0 || chain.prob(s, q) > 0.0)
                    })
                    .collect()
            })
            .collect();
        let targets = decomposition.targets().to_vec();
        let mut agent = Self {
            mdp,
            reference,
            targets,
            prior,
            utility,
            decomposition,
            admissible,
            reference_reach: 0.0,
            ceiling: Ceiling {
                policy: StationaryPolicy::new(Vec::new()),
                reach: 0.0,
                kl: 0.0,
            },
        };
        let x = occupancy_from_policy(&agent.mdp, &agent.reference, &agent.decomposition)?;
        agent.reference_reach = x.reach(&agent.mdp, &agent.targets);
        agent.ceiling = agent.max_reach_ceiling()?;
        Ok(agent)
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomposition
    }

    pub fn admissible_actions(&self, s: StateId) -> &[usize] {
        &self.admissible[s]
    }

    pub fn reference_reach(&self) -> f64 {
        self.reference_reach
    }

    /// Reach-maximizing policy on the reference-support-pruned MDP.
    pub fn ceiling(&self) -> &Ceiling {
        &self.ceiling
    }

    /// Selectable behaviors per state, reference first.
    pub fn pruned_choices(&self) -> Vec<Vec<Choice>> {
        let m = &self.mdp;
        (0..m.num_states())
            .map(|s| {
                let mut cs = vec![Choice::from_dist(m, s, self.reference.dist(s).to_vec())];
                if self.decomposition.role(s) == StateRole::Deviation {
                    cs.extend(self.admissible[s].iter().map(|&a| Choice::action(m, s, a)));
                }
                cs
            })
            .collect()
    }

    fn max_reach_ceiling(&self) -> Result<Ceiling> {
        let choices = self.pruned_choices();
        let goal = mask(self.mdp.num_states(), &self.targets);
        let best = max_reach(&goal, &choices)?;
        let policy = best.policy(&choices);
        let eval = self.evaluate(&policy)?;
        Ok(Ceiling {
            policy,
            reach: eval.reach_value,
            kl: eval.kl_value,
        })
    }

    /// Exact occupancy, reach and KL of `policy`.
    pub fn evaluate(&self, policy: &StationaryPolicy) -> Result<SubproblemSolution> {
        let occupancy = occupancy_from_policy(&self.mdp, policy, &self.decomposition)?;
        Ok(SubproblemSolution {
            reach_value: occupancy.reach(&self.mdp, &self.targets),
            kl_value: kl_occupancy(&self.mdp, &occupancy, &self.reference),
            occupancy,
            policy: policy.clone(),
            status: SolveStatus::Optimal,
        })
    }

    fn deviation_trivial(&self) -> bool {
        self.decomposition.position(self.mdp.initial()).is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub reach_value: f64,
    pub occupancy: OccupancyVector,
    pub policy: StationaryPolicy,
    pub kl_value: f64,
    pub status: SolveStatus,
}

/// Maximize the agent's reach probability with KL divergence at most `k`.
pub fn reach_subproblem<S: ConicSolver + ?Sized>(
    agent: &AgentSpec,
    k: f64,
    tol: &ToleranceSet,
    solver: &S,
) -> Result<SubproblemSolution> {
    if !(k >= 0.0) {
        return Err(Error::InvalidParams(format!("KL budget {k} is negative")));
    }
    if k == 0.0 || agent.deviation_trivial() {
        return agent.evaluate(&agent.reference);
    }
    if k >= agent.ceiling.kl {
        return agent.evaluate(&agent.ceiling.policy);
    }
    let (program, layout) = build_program(agent, k);
    let sol = solver.solve(&program, tol)?;
    if sol.status == SolveStatus::Infeasible {
        return Err(Error::SolverFailure(String::from("subproblem reported infeasible")));
    }
    let m = &agent.mdp;
    let dec = &agent.decomposition;
    let entries: Vec<Vec<f64>> = dec
        .deviation_states()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let mut row = vec![0.0; m.actions(s).len()];
            for (j, &a) in agent.admissible[s].iter().enumerate() {
                row[a] = sol.primal[layout.x_offset[i] + j].max(0.0);
            }
            row
        })
        .collect();
    let raw = OccupancyVector::new(dec.deviation_states().to_vec(), entries);
    let policy = policy_from_occupancy(m, &raw, &agent.reference)?;
    let mut out = agent.evaluate(&policy)?;
    out.status = sol.status;
    if out.kl_value > k + tol.kl {
        // pull back toward the reference until the budget holds
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut best = agent.evaluate(&agent.reference)?;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let cand = agent.evaluate(&agent.reference.mix(&policy, mid))?;
            if cand.kl_value <= k {
                lo = mid;
                best = cand;
            } else {
                hi = mid;
            }
        }
        best.status = SolveStatus::NearOptimal;
        out = best;
    }
    if out.reach_value < agent.reference_reach {
        // solver noise must never do worse than staying on the reference
        return agent.evaluate(&agent.reference);
    }
    Ok(out)
}

struct Layout {
    x_offset: Vec<usize>,
}

fn build_program(agent: &AgentSpec, k: f64) -> (ConicProgram, Layout) {
    let m = &agent.mdp;
    let dec = &agent.decomposition;
    let sd = dec.deviation_states();
    let chain = induced_chain(m, &agent.reference).expect("reference validated at construction");
    let mut x_offset = Vec::with_capacity(sd.len());
    let mut nx = 0;
    for &s in sd {
        x_offset.push(nx);
        nx += agent.admissible[s].len();
    }
    // one epigraph variable per reference transition out of S_d
    let mut t_index: Vec<(StateId, StateId, f64, usize)> = Vec::new();
    for &s in sd {
        for &(q, p) in chain.row(s) {
            if p > 0.0 {
                t_index.push((s, q, p, nx + t_index.len()));
            }
        }
    }
    let nvars = nx + t_index.len();
    let mut prog = ConicProgram::new(nvars);
    let targets = &agent.targets;
    for (i, &s) in sd.iter().enumerate() {
        for (j, &a) in agent.admissible[s].iter().enumerate() {
            let into_targets: f64 = m.actions(s)[a]
                .successors
                .iter()
                .filter(|e| targets.contains(&e.0))
                .map(|e| e.1)
                .sum();
            prog.linear[x_offset[i] + j] = -into_targets;
        }
    }
    // flow conservation on S_d
    let mut flow_rows: Vec<(Vec<(usize, f64)>, f64)> = sd
        .iter()
        .map(|&s| (Vec::new(), if s == m.initial() { 1.0 } else { 0.0 }))
        .collect();
    for (i, &s) in sd.iter().enumerate() {
        for (j, &a) in agent.admissible[s].iter().enumerate() {
            let col = x_offset[i] + j;
            flow_rows[i].0.push((col, 1.0));
            for &(q, p) in &m.actions(s)[a].successors {
                if let Some(r) = dec.position(q) {
                    flow_rows[r].0.push((col, -p));
                }
            }
        }
    }
    prog.push_block(Cone::Zero(sd.len()), flow_rows);
    let nonneg: Vec<(Vec<(usize, f64)>, f64)> = (0..nx).map(|c| (vec![(c, -1.0)], 0.0)).collect();
    prog.push_block(Cone::Nonnegative(nx), nonneg);
    let budget: Vec<(usize, f64)> = t_index.iter().map(|e| (e.3, 1.0)).collect();
    prog.push_block(Cone::Nonnegative(1), vec![(budget, k)]);
    for &(s, q, ref_p, tcol) in &t_index {
        let i = dec.position(s).unwrap();
        let mut u = Vec::new();
        let mut v = Vec::new();
        for (j, &a) in agent.admissible[s].iter().enumerate() {
            let col = x_offset[i] + j;
            let p = m.actions(s)[a].prob_to(q);
            if p > 0.0 {
                u.push((col, -p));
            }
            v.push((col, -ref_p));
        }
        // (-t, u, v) in K_exp  <=>  u ln(u / v) <= t
        prog.push_block(Cone::Exponential, vec![(vec![(tcol, 1.0)], 0.0), (u, 0.0), (v, 0.0)]);
    }
    (prog, Layout { x_offset })
}

/// Upper bound on the optimal worst-case KL, or a diagnosis of why none
/// exists.
#[derive(Debug, Clone, PartialEq)]
pub enum Kmax {
    Value(f64),
    /// Even the most capable admissible policies miss `nu_A`; succeeding
    /// would need transitions the references never take.
    Infeasible { attainable: f64, per_agent_reach: Vec<f64> },
}

impl Kmax {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Kmax::Value(v) => Some(v),
            Kmax::Infeasible { .. } => None,
        }
    }
}

pub fn compute_kmax(agents: &[AgentSpec], nu_a: f64) -> Result<Kmax> {
    let refs: Vec<f64> = agents.iter().map(|a| a.reference_reach.clamp(0.0, 1.0)).collect();
    if disjunctive_reach(&refs)? >= nu_a {
        return Ok(Kmax::Value(0.0));
    }
    let reach: Vec<f64> = agents.iter().map(|a| a.ceiling.reach.clamp(0.0, 1.0)).collect();
    let attainable = disjunctive_reach(&reach)?;
    if attainable < nu_a {
        return Ok(Kmax::Infeasible { attainable, per_agent_reach: reach });
    }
    Ok(Kmax::Value(agents.iter().map(|a| a.ceiling.kl).fold(0.0, f64::max)))
}

/// Mix the reference with a high-divergence witness until the KL equals
/// `target` within `tol`. The witness defaults to the agent's ceiling policy.
pub fn policy_with_kl(
    agent: &AgentSpec,
    witness: Option<&StationaryPolicy>,
    target: f64,
    tol: f64,
) -> Result<StationaryPolicy> {
    let hi = witness.unwrap_or(&agent.ceiling.policy);
    let kl_at = |lambda: f64| -> Result<f64> { Ok(agent.evaluate(&agent.reference.mix(hi, lambda))?.kl_value) };
    if target <= tol {
        return Ok(agent.reference.clone());
    }
    let top = kl_at(1.0)?;
    if (top - target).abs() <= tol {
        return Ok(hi.clone());
    }
    if top < target {
        return Err(Error::TargetUnattainable { target, attainable: top });
    }
    let (mut lo, mut up) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + up);
        let v = kl_at(mid)?;
        if (v - target).abs() <= tol {
            return Ok(agent.reference.mix(hi, mid));
        }
        if v < target {
            lo = mid;
        } else {
            up = mid;
        }
    }
    Ok(agent.reference.mix(hi, up))
}
