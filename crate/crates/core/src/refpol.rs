//! Supervisor-side design of reference policies: ascend the agents' optimal
//! worst-case KL divergence while keeping each supervisor task feasible.

use alloc::vec;
use alloc::vec::Vec;

use crate::chain::decompose;
use crate::conic::{Cone, ConicProgram, ConicSolver};
use crate::math::{exp, ln};
use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::occupancy::{occupancy_from_policy, policy_from_occupancy, reference_prob, OccupancyVector};
use crate::reach::{mask, max_reach, reach_probability, Choice};
use crate::subproblem::AgentSpec;
use crate::synthesis::{deceptive_synthesis_with, Parallel, SynthesisResult, TeamProblem};
use crate::{Error, Result};

/// Margin added to the supervisor thresholds inside the projection.
const PROJECTION_MARGIN: f64 = 1e-7;
const MAX_HALVINGS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorTask {
    /// `R^S_i` per agent.
    pub targets: Vec<Vec<StateId>>,
    /// `nu_S,i` per agent.
    pub thresholds: Vec<f64>,
    pub iterations: usize,
    pub step_size: f64,
    pub tau: f64,
}

impl SupervisorTask {
    pub fn new(targets: Vec<Vec<StateId>>, thresholds: Vec<f64>) -> Self {
        Self {
            targets,
            thresholds,
            iterations: 50,
            step_size: 0.05,
            tau: 0.05,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.targets.len() != n || self.thresholds.len() != n {
            return Err(Error::InvalidParams(alloc::format!(
                "supervisor task lists {} target sets and {} thresholds for {n} agents",
                self.targets.len(),
                self.thresholds.len()
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidParams(alloc::format!("threshold {t} outside [0, 1]")));
        }
        if !(self.tau > 0.0) || !(self.step_size > 0.0) {
            return Err(Error::InvalidParams("tau and step size must be positive".into()));
        }
        Ok(())
    }
}

/// Shifted log-sum-exp, `tau ln sum_i exp(kl_i / tau) - tau ln n`. It lies in
/// `[max - tau ln n, max]`.
pub fn smoothed_worst_kl(kl: &[f64], tau: f64) -> f64 {
    if kl.is_empty() {
        return 0.0;
    }
    let top = kl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top.is_infinite() {
        return top;
    }
    let sum: f64 = kl.iter().map(|&k| exp((k - top) / tau)).sum();
    top + tau * ln(sum) - tau * ln(kl.len() as f64)
}

/// Weights `d smoothed / d kl_i`.
pub fn smoothing_weights(kl: &[f64], tau: f64) -> Vec<f64> {
    let top = kl.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = kl.iter().map(|&k| exp((k - top) / tau)).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

/// Gradient of the path-level KL of occupancy `x` with respect to the
/// reference action probabilities, holding `x` fixed.
pub fn reference_gradient(m: &Mdp, reference: &StationaryPolicy, x: &OccupancyVector) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..m.num_states()).map(|s| vec![0.0; m.actions(s).len()]).collect();
    for &s in x.deviation_states() {
        for (q, f) in x.flows(m, s) {
            let r = reference_prob(m, reference, s, q);
            if f <= 0.0 || r <= 0.0 {
                continue;
            }
            for (a, act) in m.actions(s).iter().enumerate() {
                g[s][a] -= f * act.prob_to(q) / r;
            }
        }
    }
    g
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub accepted: bool,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefpolResult {
    pub references: Vec<StationaryPolicy>,
    pub objective: f64,
    pub initial_objective: f64,
    pub trace: Vec<TraceEntry>,
    /// The agents cannot reach their targets at any finite divergence.
    pub unbounded: bool,
}

struct Iterate {
    references: Vec<StationaryPolicy>,
    objective: f64,
    inner: Option<SynthesisResult>,
}

/// Improve the references of `problem` by projected gradient ascent on the
/// smoothed worst-case divergence, with the team synthesis as max-oracle.
/// Returns the best iterate found.
pub fn synthesize_reference<S: ConicSolver + ?Sized, P: Parallel + Copy>(
    problem: &TeamProblem,
    task: &SupervisorTask,
    solver: &S,
    exec: P,
) -> Result<RefpolResult> {
    problem.validate()?;
    let n = problem.agents.len();
    task.validate(n)?;
    for (i, agent) in problem.agents.iter().enumerate() {
        let best = supervisor_max_reach(&agent.mdp, &task.targets[i])?;
        if best < task.thresholds[i] {
            return Err(Error::InfeasibleSupervisorTask {
                agent: i,
                max_reach: best,
                threshold: task.thresholds[i],
            });
        }
    }
    let mut start = Vec::with_capacity(n);
    for (i, agent) in problem.agents.iter().enumerate() {
        start.push(project_reference(
            &agent.mdp,
            &agent.reference,
            &agent.reference,
            &task.targets[i],
            task.thresholds[i],
            solver,
        )?);
    }
    let mut current = evaluate(problem, start, solver, exec)?;
    let initial_objective = current.objective;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        objective: current.objective,
        accepted: true,
        step: 0.0,
    }];
    if current.objective.is_infinite() {
        return Ok(RefpolResult {
            references: current.references,
            objective: f64::INFINITY,
            initial_objective,
            trace,
            unbounded: true,
        });
    }
    for iteration in 1..=task.iterations {
        let Some(inner) = current.inner.as_ref() else { break };
        let weights = smoothing_weights(&inner.per_agent_kl, task.tau);
        let grads: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| {
                let a = &problem.agents[i];
                let mut g = reference_gradient(&a.mdp, &current.references[i], &inner.occupancies[i]);
                for row in g.iter_mut() {
                    let mean = row.iter().sum::<f64>() / row.len() as f64;
                    for v in row.iter_mut() {
                        *v = weights[i] * (*v - mean);
                    }
                }
                g
            })
            .collect();
        let scale = grads
            .iter()
            .flatten()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale <= 1e-15 {
            break;
        }
        let mut step = task.step_size;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let mut refs = Vec::with_capacity(n);
            for i in 0..n {
                let a = &problem.agents[i];
                let old = &current.references[i];
                let mut stepped = old.clone();
                for s in 0..a.mdp.num_states() {
                    if a.mdp.actions(s).len() < 2 {
                        continue;
                    }
                    let raw: Vec<f64> = old
                        .dist(s)
                        .iter()
                        .zip(&grads[i][s])
                        .map(|(p, g)| p + step * g / scale)
                        .collect();
                    stepped.set_dist(s, project_simplex(&raw));
                }
                refs.push(project_reference(
                    &a.mdp,
                    &stepped,
                    old,
                    &task.targets[i],
                    task.thresholds[i],
                    solver,
                )?);
            }
            let unchanged = refs
                .iter()
                .zip(&current.references)
                .all(|(r, c)| r.max_abs_diff(c, 0..r.num_states()) <= 1e-12);
            if unchanged {
                // the projected step is null: a stationary point
                break;
            }
            let cand = evaluate(problem, refs, solver, exec)?;
            let accepted = cand.objective >= current.objective;
            trace.push(TraceEntry {
                iteration,
                objective: cand.objective,
                accepted,
                step,
            });
            if accepted {
                current = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved || current.objective.is_infinite() {
            break;
        }
    }
    Ok(RefpolResult {
        unbounded: current.objective.is_infinite(),
        references: current.references,
        objective: current.objective,
        initial_objective,
        trace,
    })
}

fn evaluate<S: ConicSolver + ?Sized, P: Parallel>(
    problem: &TeamProblem,
    references: Vec<StationaryPolicy>,
    solver: &S,
    exec: P,
) -> Result<Iterate> {
    let agents = problem
        .agents
        .iter()
        .zip(&references)
        .map(|(a, r)| AgentSpec::new(a.mdp.clone(), r.clone(), a.targets.clone(), a.prior, a.utility))
        .collect::<Result<Vec<_>>>()?;
    let inner_problem = TeamProblem {
        agents,
        k_max: None,
        ..problem.clone()
    };
    match deceptive_synthesis_with(&inner_problem, solver, exec) {
        Ok(res) => Ok(Iterate {
            references,
            objective: res.kl_bound,
            inner: Some(res),
        }),
        Err(Error::Infeasible(_)) => Ok(Iterate {
            references,
            objective: f64::INFINITY,
            inner: None,
        }),
        Err(e) => Err(e),
    }
}

/// Highest probability of reaching `targets` over all policies.
pub fn supervisor_max_reach(m: &Mdp, targets: &[StateId]) -> Result<f64> {
    let choices: Vec<Vec<Choice>> = (0..m.num_states())
        .map(|s| (0..m.actions(s).len()).map(|a| Choice::action(m, s, a)).collect())
        .collect();
    let best = max_reach(&mask(m.num_states(), targets), &choices)?;
    Ok(best.values[m.initial()])
}

/// Nearest policy, measured in occupancy space, that reaches `targets` with
/// probability at least `threshold`. Falls back to mixing with the feasible
/// `anchor` when the projection cannot be posed or solved.
pub fn project_reference<S: ConicSolver + ?Sized>(
    m: &Mdp,
    candidate: &StationaryPolicy,
    anchor: &StationaryPolicy,
    targets: &[StateId],
    threshold: f64,
    solver: &S,
) -> Result<StationaryPolicy> {
    let feasible = |p: &StationaryPolicy| -> Result<bool> { Ok(reach_probability(m, p, targets)? >= threshold) };
    if feasible(candidate)? {
        return Ok(candidate.clone());
    }
    if let Some(p) = occupancy_projection(m, candidate, targets, threshold, solver)? {
        if feasible(&p)? {
            return Ok(p);
        }
    }
    if !feasible(anchor)? {
        // no feasible anchor: take the reach-maximizing policy
        let choices: Vec<Vec<Choice>> = (0..m.num_states())
            .map(|s| (0..m.actions(s).len()).map(|a| Choice::action(m, s, a)).collect())
            .collect();
        let best = max_reach(&mask(m.num_states(), targets), &choices)?;
        return Ok(best.policy(&choices));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if feasible(&anchor.mix(candidate, mid))? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(anchor.mix(candidate, lo))
}

fn occupancy_projection<S: ConicSolver + ?Sized>(
    m: &Mdp,
    candidate: &StationaryPolicy,
    targets: &[StateId],
    threshold: f64,
    solver: &S,
) -> Result<Option<StationaryPolicy>> {
    let Ok(dec) = decompose(m, candidate, targets) else {
        return Ok(None);
    };
    let sd = dec.deviation_states();
    if dec.position(m.initial()).is_none() {
        return Ok(None);
    }
    let x_tilde = occupancy_from_policy(m, candidate, &dec)?;
    let mut offset = Vec::with_capacity(sd.len());
    let mut nx = 0;
    for &s in sd {
        offset.push(nx);
        nx += m.actions(s).len();
    }
    let mut prog = ConicProgram::new(nx);
    for (i, &s) in sd.iter().enumerate() {
        for a in 0..m.actions(s).len() {
            let col = offset[i] + a;
            prog.quadratic.push((col, col, 2.0));
            prog.linear[col] = -2.0 * x_tilde.get(s, a);
        }
    }
    let mut flow: Vec<(Vec<(usize, f64)>, f64)> = sd
        .iter()
        .map(|&s| (Vec::new(), if s == m.initial() { 1.0 } else { 0.0 }))
        .collect();
    let mut reach_row = Vec::new();
    for (i, &s) in sd.iter().enumerate() {
        for (a, act) in m.actions(s).iter().enumerate() {
            let col = offset[i] + a;
            flow[i].0.push((col, 1.0));
            let mut into = 0.0;
            for &(q, p) in &act.successors {
                if let Some(r) = dec.position(q) {
                    flow[r].0.push((col, -p));
                }
                if targets.contains(&q) {
                    into += p;
                }
            }
            if into > 0.0 {
                reach_row.push((col, -into));
            }
        }
    }
    prog.push_block(Cone::Zero(sd.len()), flow);
    prog.push_block(Cone::Nonnegative(nx), (0..nx).map(|c| (vec![(c, -1.0)], 0.0)).collect());
    prog.push_block(Cone::Nonnegative(1), vec![(reach_row, -(threshold + PROJECTION_MARGIN).min(1.0))]);
    let Ok(sol) = solver.solve(&prog, &Default::default()) else {
        return Ok(None);
    };
    let entries = sd
        .iter()
        .enumerate()
        .map(|(i, &s)| (0..m.actions(s).len()).map(|a| sol.primal[offset[i] + a].max(0.0)).collect())
        .collect();
    let x = OccupancyVector::new(sd.to_vec(), entries);
    Ok(policy_from_occupancy(m, &x, candidate).ok())
}
