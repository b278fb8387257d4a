//! Team-level synthesis: the bisection over the shared KL budget and its
//! elimination-aware extension with decoys.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use crate::conic::{ConicSolver, ToleranceSet};
use crate::mdp::StationaryPolicy;
use crate::occupancy::OccupancyVector;
use crate::reach::disjunctive_reach;
use crate::subproblem::{compute_kmax, policy_with_kl, reach_subproblem, AgentSpec, Kmax, SubproblemSolution};
use crate::supervisor::belief_proxy;
use crate::{Error, Result};

/// Runs independent jobs, possibly in parallel. Results come back in index
/// order.
pub trait Parallel: Sync {
    fn map_indexed<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Parallel for Sequential {
    fn map_indexed<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamProblem {
    pub agents: Vec<AgentSpec>,
    pub nu_a: f64,
    pub epsilon: f64,
    /// User-supplied upper bound; computed from the agents when absent.
    pub k_max: Option<f64>,
    pub gamma_prime: f64,
    pub m_r: u32,
    /// Slack for the strict budget inequality. Only validated: reported
    /// budgets are suprema.
    pub delta_margin: f64,
    pub tol: ToleranceSet,
}

impl TeamProblem {
    pub fn new(agents: Vec<AgentSpec>, nu_a: f64) -> Self {
        Self {
            agents,
            nu_a,
            epsilon: 1e-3,
            k_max: None,
            gamma_prime: 1.2,
            m_r: 1,
            delta_margin: 0.0,
            tol: ToleranceSet::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.nu_a) {
            return Err(Error::InvalidParams(format!("nu_A = {} outside [0, 1]", self.nu_a)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if !(self.gamma_prime > 1.0) {
            return Err(Error::InvalidParams(format!("gamma' = {} must exceed 1", self.gamma_prime)));
        }
        if self.m_r == 0 {
            return Err(Error::InvalidParams("m_r must be positive".into()));
        }
        if !(self.delta_margin >= 0.0) {
            return Err(Error::InvalidParams(format!("delta margin = {} is negative", self.delta_margin)));
        }
        if self.agents.is_empty() {
            return Err(Error::InvalidParams("no agents".into()));
        }
        if let Some(k) = self.k_max {
            if !(k >= 0.0) {
                return Err(Error::InvalidParams(format!("k_max = {k} is negative")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub policies: Vec<StationaryPolicy>,
    pub occupancies: Vec<OccupancyVector>,
    pub kl_bound: f64,
    pub per_agent_kl: Vec<f64>,
    pub per_agent_reach: Vec<f64>,
    pub disjunctive_reach: f64,
    pub k_max: f64,
    pub iterations: usize,
}

/// One entry of the decoy sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoyRow {
    pub k: usize,
    /// `None` when the row failed.
    pub b_k: Option<f64>,
    pub kl_bound: f64,
    pub fail: bool,
    pub decoys: Vec<usize>,
    pub survivor_reach: f64,
    /// Supremum of capacities under which a greedy supervisor eliminates
    /// only decoys.
    pub capacity_sup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationResult {
    pub b_table: Vec<DecoyRow>,
    pub k_star: usize,
    pub decoy_set: Vec<usize>,
    pub policies: Vec<StationaryPolicy>,
    pub non_decoy_kl: f64,
    pub decoy_kl: f64,
    pub per_agent_kl: Vec<f64>,
    pub per_agent_reach: Vec<f64>,
    pub survivor_reach: f64,
    pub capacity_sup: f64,
    pub k_max: f64,
}

/// Outcome of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub upper: f64,
    pub iterations: usize,
}

/// Shrink `[0, upper]` around the smallest `K` with `f(K) >= 0`, keeping
/// `f(lo) < 0 <= f(hi)` and never stopping early at a zero. Returns the
/// feasible endpoint.
pub fn bisection(mut f: impl FnMut(f64) -> Result<f64>, upper: f64, eps: f64) -> Result<Bisection> {
    if f(0.0)? >= 0.0 {
        return Ok(Bisection { upper: 0.0, iterations: 0 });
    }
    let top = f(upper)?;
    if top < 0.0 {
        return Err(Error::UpperBoundNotFeasible { upper, value: top });
    }
    bisect_between(&mut f, 0.0, upper, eps)
}

fn bisect_between(f: &mut impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, eps: f64) -> Result<Bisection> {
    let (mut lo, mut hi) = (lo, hi);
    let mut iterations = 0;
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        if f(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(Bisection { upper: hi, iterations })
}

/// Solves subproblems for a fixed team, caching by `(agent, K)`.
pub struct Engine<'a, S: ?Sized, P> {
    agents: &'a [AgentSpec],
    solver: &'a S,
    exec: P,
    tol: ToleranceSet,
    cache: RefCell<BTreeMap<(usize, u64), SubproblemSolution>>,
    solves: Cell<usize>,
}

impl<'a, S: ConicSolver + ?Sized, P: Parallel> Engine<'a, S, P> {
    pub fn new(agents: &'a [AgentSpec], solver: &'a S, exec: P, tol: ToleranceSet) -> Self {
        Self {
            agents,
            solver,
            exec,
            tol,
            cache: RefCell::new(BTreeMap::new()),
            solves: Cell::new(0),
        }
    }

    /// Number of subproblems solved so far (cache hits excluded).
    pub fn solves(&self) -> usize {
        self.solves.get()
    }

    pub fn solve_all(&self, k: f64) -> Result<Vec<SubproblemSolution>> {
        let key = k.to_bits();
        let missing: Vec<usize> = {
            let cache = self.cache.borrow();
            (0..self.agents.len()).filter(|&i| !cache.contains_key(&(i, key))).collect()
        };
        if !missing.is_empty() {
            let agents = self.agents;
            let solver = self.solver;
            let tol = self.tol;
            let fresh = self
                .exec
                .map_indexed(missing.len(), &|j| reach_subproblem(&agents[missing[j]], k, &tol, solver));
            self.solves.set(self.solves.get() + missing.len());
            let mut cache = self.cache.borrow_mut();
            for (&i, sol) in missing.iter().zip(fresh) {
                cache.insert((i, key), sol?);
            }
        }
        let cache = self.cache.borrow();
        Ok((0..self.agents.len()).map(|i| cache[&(i, key)].clone()).collect())
    }

    pub fn reach_evaluate(&self, nu_a: f64, k: f64) -> Result<f64> {
        let sols = self.solve_all(k)?;
        let reach: Vec<f64> = sols.iter().map(|s| s.reach_value.clamp(0.0, 1.0)).collect();
        Ok(disjunctive_reach(&reach)? - nu_a)
    }

    /// Keep the `w` agents with the highest reach at budget `k`, forcing in
    /// first those unable to act as decoys at `k * gamma_prime`.
    pub fn reach_evaluate_sub(&self, nu_a: f64, k: f64, w: usize, gamma_prime: f64) -> Result<SubEvaluation> {
        let sols = self.solve_all(k)?;
        let n = self.agents.len();
        let mut kept: Vec<usize> = (0..n).filter(|&i| !decoy_eligible(&self.agents[i], k, gamma_prime)).collect();
        if kept.len() > w {
            return Ok(SubEvaluation {
                value: f64::NEG_INFINITY,
                kept,
                excluded: Vec::new(),
            });
        }
        let mut rest: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
        rest.sort_by(|&a, &b| sols[b].reach_value.total_cmp(&sols[a].reach_value).then(a.cmp(&b)));
        kept.extend(rest.iter().take(w - kept.len()));
        kept.sort_unstable();
        let excluded: Vec<usize> = (0..n).filter(|i| !kept.contains(i)).collect();
        let reach: Vec<f64> = kept.iter().map(|&i| sols[i].reach_value.clamp(0.0, 1.0)).collect();
        Ok(SubEvaluation {
            value: disjunctive_reach(&reach)? - nu_a,
            kept,
            excluded,
        })
    }

    /// Bisection over [`Self::reach_evaluate_sub`].
    ///
    /// Forcing ineligible decoys makes the evaluation drop at the budgets
    /// `ceiling_i / gamma_prime`; between consecutive drops it is monotone,
    /// so each piece is searched in increasing order and the first feasible
    /// one is bisected.
    pub fn subset_search(&self, nu_a: f64, k_max: f64, eps: f64, w: usize, gamma_prime: f64) -> Result<SubsetSearch> {
        let mut f = |k: f64| self.reach_evaluate_sub(nu_a, k, w, gamma_prime).map(|e| e.value);
        if f(0.0)? >= 0.0 {
            return Ok(SubsetSearch { kl_bound: 0.0, fail: false, iterations: 0 });
        }
        // keeping everyone never forces anything, so the function is monotone
        let mut cuts: Vec<f64> = if w >= self.agents.len() {
            Vec::new()
        } else {
            self.agents
                .iter()
                .map(|a| a.ceiling().kl / gamma_prime)
                .filter(|&c| c > 0.0 && c < k_max)
                .collect()
        };
        cuts.push(k_max);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut lo = 0.0;
        let mut iterations = 0;
        for &hi in &cuts {
            if f(hi)? >= 0.0 {
                let b = bisect_between(&mut f, lo, hi, eps)?;
                return Ok(SubsetSearch {
                    kl_bound: b.upper,
                    fail: false,
                    iterations: iterations + b.iterations,
                });
            }
            iterations += 1;
            lo = hi;
        }
        Ok(SubsetSearch { kl_bound: k_max, fail: true, iterations })
    }
}

/// An agent can serve as a decoy at budget `k` only if it can reach KL
/// `k * gamma_prime` without leaving the reference support.
pub fn decoy_eligible(agent: &AgentSpec, k: f64, gamma_prime: f64) -> bool {
    k * gamma_prime <= agent.ceiling().kl
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubEvaluation {
    pub value: f64,
    pub kept: Vec<usize>,
    pub excluded: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSearch {
    pub kl_bound: f64,
    pub fail: bool,
    pub iterations: usize,
}

pub fn reach_evaluate<S: ConicSolver + ?Sized>(
    agents: &[AgentSpec],
    nu_a: f64,
    k: f64,
    tol: &ToleranceSet,
    solver: &S,
) -> Result<f64> {
    Engine::new(agents, solver, Sequential, *tol).reach_evaluate(nu_a, k)
}

pub fn reach_evaluate_sub<S: ConicSolver + ?Sized>(
    problem: &TeamProblem,
    k: f64,
    w: usize,
    solver: &S,
) -> Result<SubEvaluation> {
    Engine::new(&problem.agents, solver, Sequential, problem.tol).reach_evaluate_sub(
        problem.nu_a,
        k,
        w,
        problem.gamma_prime,
    )
}

pub fn subset_search<S: ConicSolver + ?Sized>(
    problem: &TeamProblem,
    k_max: f64,
    w: usize,
    solver: &S,
) -> Result<SubsetSearch> {
    Engine::new(&problem.agents, solver, Sequential, problem.tol).subset_search(
        problem.nu_a,
        k_max,
        problem.epsilon,
        w,
        problem.gamma_prime,
    )
}

fn resolve_kmax(problem: &TeamProblem) -> Result<f64> {
    if let Some(k) = problem.k_max {
        return Ok(k);
    }
    match compute_kmax(&problem.agents, problem.nu_a)? {
        Kmax::Value(k) => Ok(k),
        Kmax::Infeasible { attainable, per_agent_reach } => Err(Error::Infeasible(diagnose(attainable, &per_agent_reach))),
    }
}

fn diagnose(attainable: f64, reach: &[f64]) -> String {
    let mut s = format!(
        "the agents must use state transitions with zero probability under their references: \
         best admissible team reach is {attainable:.6} (per agent:"
    );
    for r in reach {
        s.push_str(&format!(" {r:.6}"));
    }
    s.push(')');
    s
}

/// Minimize the worst-case KL divergence subject to the team reaching its
/// targets with probability at least `nu_A`.
pub fn deceptive_synthesis<S: ConicSolver + ?Sized>(problem: &TeamProblem, solver: &S) -> Result<SynthesisResult> {
    deceptive_synthesis_with(problem, solver, Sequential)
}

pub fn deceptive_synthesis_with<S: ConicSolver + ?Sized, P: Parallel>(
    problem: &TeamProblem,
    solver: &S,
    exec: P,
) -> Result<SynthesisResult> {
    problem.validate()?;
    let k_max = resolve_kmax(problem)?;
    let engine = Engine::new(&problem.agents, solver, exec, problem.tol);
    let b = bisection(|k| engine.reach_evaluate(problem.nu_a, k), k_max, problem.epsilon)?;
    let sols = engine.solve_all(b.upper)?;
    let per_agent_reach: Vec<f64> = sols.iter().map(|s| s.reach_value).collect();
    let clamped: Vec<f64> = per_agent_reach.iter().map(|r| r.clamp(0.0, 1.0)).collect();
    Ok(SynthesisResult {
        disjunctive_reach: disjunctive_reach(&clamped)?,
        per_agent_kl: sols.iter().map(|s| s.kl_value).collect(),
        per_agent_reach,
        occupancies: sols.iter().map(|s| s.occupancy.clone()).collect(),
        policies: sols.into_iter().map(|s| s.policy).collect(),
        kl_bound: b.upper,
        k_max,
        iterations: b.iterations,
    })
}

/// Upper bound on non-decoy budgets worth considering: beyond the returned
/// `K`, even `n - 1` decoys cannot beat running without decoys at
/// `k_prime_max`.
pub fn kmax_for_decoys(n: usize, prior: f64, m_r: u32, gamma_prime: f64, k_prime_max: f64) -> f64 {
    if n <= 1 {
        return k_prime_max;
    }
    let target = belief_proxy(prior, m_r, k_prime_max);
    let g = |k: f64| (n - 1) as f64 * belief_proxy(prior, m_r, k * gamma_prime) + belief_proxy(prior, m_r, k) - target;
    let mut lo = k_prime_max;
    if g(lo) <= 0.0 {
        return lo;
    }
    let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
    let mut found = false;
    for _ in 0..80 {
        if g(hi) < 0.0 {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return k_prime_max * n as f64;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Sweep the number of decoys and keep the allocation that maximizes the
/// budget a greedy supervisor needs before it reaches a non-decoy.
pub fn deceptive_subset_selection<S: ConicSolver + ?Sized>(
    problem: &TeamProblem,
    solver: &S,
) -> Result<EliminationResult> {
    deceptive_subset_selection_with(problem, solver, Sequential)
}

pub fn deceptive_subset_selection_with<S: ConicSolver + ?Sized, P: Parallel>(
    problem: &TeamProblem,
    solver: &S,
    exec: P,
) -> Result<EliminationResult> {
    problem.validate()?;
    let agents = &problem.agents;
    let n = agents.len();
    let p = agents[0].prior;
    let v = agents[0].utility;
    if agents.iter().any(|a| (a.prior - p).abs() > 1e-12 || (a.utility - v).abs() > 1e-12) {
        return Err(Error::InvalidParams(
            "decoy allocation needs equal priors and equal utilities across agents".into(),
        ));
    }
    let k_prime = resolve_kmax(problem)?;
    let k_max = kmax_for_decoys(n, p, problem.m_r, problem.gamma_prime, k_prime);
    let engine = Engine::new(agents, solver, exec, problem.tol);
    let proxy = |k: f64| belief_proxy(p, problem.m_r, k);
    let mut rows = Vec::with_capacity(n);
    for k in 0..n {
        let w = n - k;
        // without decoys the plain bound suffices and reproduces the worst-case synthesis
        let upper = if k == 0 { k_prime } else { k_max };
        let search = engine.subset_search(problem.nu_a, upper, problem.epsilon, w, problem.gamma_prime)?;
        let eval = engine.reach_evaluate_sub(problem.nu_a, search.kl_bound, w, problem.gamma_prime)?;
        let kl = search.kl_bound;
        let (b_k, capacity_sup) = if search.fail {
            (None, None)
        } else {
            let b = k as f64 * proxy(kl * problem.gamma_prime) + proxy(kl);
            (Some(b), Some(b))
        };
        rows.push(DecoyRow {
            k,
            b_k,
            kl_bound: kl,
            fail: search.fail,
            decoys: if search.fail { Vec::new() } else { eval.excluded.clone() },
            survivor_reach: eval.value + problem.nu_a,
            capacity_sup,
        });
    }
    let best = rows
        .iter()
        .filter_map(|r| r.b_k.map(|b| (r.k, b)))
        .fold(None, |acc: Option<(usize, f64)>, (k, b)| match acc {
            Some((_, bb)) if bb >= b => acc,
            _ => Some((k, b)),
        })
        .ok_or(Error::AllFailed)?;
    let k_star = best.0;
    let row = &rows[k_star];
    let kl = row.kl_bound;
    let sols = engine.solve_all(kl)?;
    let decoy_kl = kl * problem.gamma_prime;
    let mut policies = Vec::with_capacity(n);
    let mut per_agent_kl = Vec::with_capacity(n);
    let mut per_agent_reach = Vec::with_capacity(n);
    for (i, sol) in sols.iter().enumerate() {
        if row.decoys.contains(&i) {
            let pol = policy_with_kl(&agents[i], None, decoy_kl, 1e-7)?;
            let eval = agents[i].evaluate(&pol)?;
            per_agent_kl.push(eval.kl_value);
            per_agent_reach.push(eval.reach_value);
            policies.push(pol);
        } else {
            per_agent_kl.push(sol.kl_value);
            per_agent_reach.push(sol.reach_value);
            policies.push(sol.policy.clone());
        }
    }
    let survivors: Vec<f64> = (0..n)
        .filter(|i| !row.decoys.contains(i))
        .map(|i| per_agent_reach[i].clamp(0.0, 1.0))
        .collect();
    let decoy_mass: f64 = row.decoys.iter().map(|&i| proxy(per_agent_kl[i])).sum();
    let lightest_survivor = (0..n)
        .filter(|i| !row.decoys.contains(i))
        .map(|i| proxy(per_agent_kl[i]))
        .fold(f64::INFINITY, f64::min);
    Ok(EliminationResult {
        survivor_reach: disjunctive_reach(&survivors)?,
        capacity_sup: decoy_mass + lightest_survivor,
        decoy_set: row.decoys.clone(),
        b_table: rows.clone(),
        k_star,
        policies,
        non_decoy_kl: kl,
        decoy_kl,
        per_agent_kl,
        per_agent_reach,
        k_max,
    })
}
