//! Reachability probabilities: exact hitting probabilities of induced
//! chains, the disjunctive team probability, and maximal reachability.

use alloc::vec;
use alloc::vec::Vec;

use crate::chain::{induced_chain, MarkovChain};
use crate::linalg::solve_fixed_point;
use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::{Error, Result};

/// Probability of eventually hitting `goal` from every state.
pub fn hitting_probabilities(chain: &MarkovChain, goal: &[bool]) -> Result<Vec<f64>> {
    let n = chain.num_states();
    let can = chain.can_reach(goal);
    let unknown: Vec<StateId> = (0..n).filter(|&s| can[s] && !goal[s]).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &s) in unknown.iter().enumerate() {
        pos[s] = i;
    }
    let mut rows = Vec::with_capacity(unknown.len());
    let mut rhs = Vec::with_capacity(unknown.len());
    for &s in &unknown {
        let mut row = Vec::new();
        let mut b = 0.0;
        for &(q, p) in chain.row(s) {
            if goal[q] {
                b += p;
            } else if pos[q] != usize::MAX {
                row.push((pos[q], p));
            }
        }
        rows.push(row);
        rhs.push(b);
    }
    let x = solve_fixed_point(&rows, &rhs)
        .ok_or_else(|| Error::SolverFailure(alloc::string::String::from("singular hitting-probability system")))?;
    let mut out = vec![0.0; n];
    for s in 0..n {
        if goal[s] {
            out[s] = 1.0;
        } else if pos[s] != usize::MAX {
            out[s] = x[pos[s]].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

pub(crate) fn mask(n: usize, states: &[StateId]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &s in states {
        m[s] = true;
    }
    m
}

/// `Pr(s0 |= <> targets)` under `pol`.
pub fn reach_probability(m: &Mdp, pol: &StationaryPolicy, targets: &[StateId]) -> Result<f64> {
    let chain = induced_chain(m, pol)?;
    let h = hitting_probabilities(&chain, &mask(m.num_states(), targets))?;
    Ok(h[m.initial()])
}

/// `1 - prod_i (1 - probs[i])`; empty input gives 0.
pub fn disjunctive_reach(probs: &[f64]) -> Result<f64> {
    let mut miss = 1.0;
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange(p));
        }
        miss *= 1.0 - p;
    }
    Ok(1.0 - miss)
}

/// One selectable behavior at a state: an action distribution and the
/// successor row it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub dist: Vec<f64>,
    pub row: Vec<(StateId, f64)>,
}

impl Choice {
    pub fn from_dist(m: &Mdp, s: StateId, dist: Vec<f64>) -> Self {
        let mut acc: Vec<(StateId, f64)> = Vec::new();
        for (a, act) in m.actions(s).iter().enumerate() {
            if dist[a] == 0.0 {
                continue;
            }
            for &(q, p) in &act.successors {
                acc.push((q, dist[a] * p));
            }
        }
        acc.sort_by_key(|e| e.0);
        let mut row: Vec<(StateId, f64)> = Vec::new();
        for (q, p) in acc {
            match row.last_mut() {
                Some(l) if l.0 == q => l.1 += p,
                _ => row.push((q, p)),
            }
        }
        Self { dist, row }
    }

    pub fn action(m: &Mdp, s: StateId, a: usize) -> Self {
        let mut d = vec![0.0; m.actions(s).len()];
        d[a] = 1.0;
        Self::from_dist(m, s, d)
    }

    fn value(&self, v: &[f64]) -> f64 {
        self.row.iter().map(|&(q, p)| p * v[q]).sum()
    }
}

/// A reach-maximizing selection among per-state [`Choice`]s.
#[derive(Debug, Clone)]
pub struct MaxReach {
    pub chosen: Vec<usize>,
    pub values: Vec<f64>,
}

impl MaxReach {
    pub fn policy(&self, choices: &[Vec<Choice>]) -> StationaryPolicy {
        StationaryPolicy::new(
            self.chosen
                .iter()
                .zip(choices)
                .map(|(&c, cs)| cs[c].dist.clone())
                .collect(),
        )
    }
}

/// Maximize the probability of reaching `goal`.
///
/// `choices[s]` is listed in preference order: ties among optimal choices go
/// to the earliest one that makes progress toward the goal, and states that
/// cannot reach the goal take their first choice. Progress-based selection
/// keeps every state with positive value transient.
pub fn max_reach(goal: &[bool], choices: &[Vec<Choice>]) -> Result<MaxReach> {
    let n = goal.len();
    // states able to reach the goal under some choice
    let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for (s, cs) in choices.iter().enumerate() {
        for c in cs {
            for &(q, p) in &c.row {
                if p > 0.0 {
                    preds[q].push(s);
                }
            }
        }
    }
    let mut live = goal.to_vec();
    let mut stack: Vec<StateId> = (0..n).filter(|&s| goal[s]).collect();
    while let Some(q) = stack.pop() {
        for &s in &preds[q] {
            if !live[s] {
                live[s] = true;
                stack.push(s);
            }
        }
    }

    let mut v: Vec<f64> = (0..n).map(|s| if goal[s] { 1.0 } else { 0.0 }).collect();
    for _ in 0..1_000_000 {
        let mut delta: f64 = 0.0;
        for s in 0..n {
            if goal[s] || !live[s] {
                continue;
            }
            let best = choices[s].iter().map(|c| c.value(&v)).fold(0.0, f64::max);
            delta = delta.max(best - v[s]);
            v[s] = best;
        }
        if delta < 1e-14 {
            break;
        }
    }

    let mut chosen = vec![0usize; n];
    for _ in 0..n + 2 {
        chosen = extract(goal, &live, choices, &v);
        let exact = evaluate(goal, &live, choices, &chosen)?;
        let improved = (0..n).any(|s| exact[s] > v[s] + 1e-13);
        let better_choice = (0..n).any(|s| {
            !goal[s] && live[s] && choices[s].iter().any(|c| c.value(&exact) > exact[s] + 1e-12)
        });
        v = exact;
        if !improved && !better_choice {
            break;
        }
    }
    Ok(MaxReach { chosen, values: v })
}

fn extract(goal: &[bool], live: &[bool], choices: &[Vec<Choice>], v: &[f64]) -> Vec<usize> {
    let n = goal.len();
    let mut chosen = vec![0usize; n];
    let mut pending: Vec<StateId> = (0..n).filter(|&s| !goal[s] && live[s] && v[s] > 0.0).collect();
    let opt: Vec<Vec<usize>> = (0..n)
        .map(|s| {
            if goal[s] || !live[s] {
                return Vec::new();
            }
            let best = choices[s].iter().map(|c| c.value(v)).fold(0.0, f64::max);
            let tol = 1e-10 * best.max(1e-300);
            (0..choices[s].len())
                .filter(|&c| choices[s][c].value(v) >= best - tol)
                .collect()
        })
        .collect();
    // attractor layers: a state is settled once an optimal choice moves
    // into the goal or an already settled state
    let mut progress = goal.to_vec();
    loop {
        let mut layer: Vec<(StateId, usize)> = Vec::new();
        for &s in &pending {
            if let Some(&c) = opt[s]
                .iter()
                .find(|&&c| choices[s][c].row.iter().any(|&(q, p)| p > 0.0 && progress[q]))
            {
                layer.push((s, c));
            }
        }
        if layer.is_empty() {
            break;
        }
        for &(s, c) in &layer {
            chosen[s] = c;
            progress[s] = true;
        }
        pending.retain(|&s| !progress[s]);
    }
    for &s in &pending {
        let best = (0..choices[s].len())
            .max_by(|&a, &b| {
                choices[s][a]
                    .value(v)
                    .partial_cmp(&choices[s][b].value(v))
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        chosen[s] = best;
    }
    chosen
}

fn evaluate(goal: &[bool], live: &[bool], choices: &[Vec<Choice>], chosen: &[usize]) -> Result<Vec<f64>> {
    let rows: Vec<Vec<(StateId, f64)>> = (0..goal.len())
        .map(|s| {
            if goal[s] {
                vec![(s, 1.0)]
            } else if !live[s] {
                Vec::new()
            } else {
                choices[s][chosen[s]].row.clone()
            }
        })
        .collect();
    let chain = MarkovChain::from_rows(rows);
    hitting_probabilities(&chain, goal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::*;
    use proptest::prelude::*;

    #[test]
    fn running_example_reference_reach() {
        let m = running_example();
        let star = [4];
        let r1 = reach_probability(&m, &reference_1(&m), &star).unwrap();
        let r2 = reach_probability(&m, &reference_2(&m), &star).unwrap();
        assert!((r1 - 0.18).abs() < 1e-12);
        assert!((r2 - 0.02).abs() < 1e-12);
        assert!((reach_probability(&m, &land_policy(&m), &star).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn initial_state_target() {
        let m = running_example();
        assert_eq!(reach_probability(&m, &reference_1(&m), &[0]).unwrap(), 1.0);
    }

    #[test]
    fn disjunctive_examples() {
        assert!((disjunctive_reach(&[0.18, 0.02]).unwrap() - 0.1964).abs() < 1e-12);
        assert!((disjunctive_reach(&[0.9, 0.02]).unwrap() - 0.902).abs() < 1e-12);
        assert_eq!(disjunctive_reach(&[1.0, 0.3]).unwrap(), 1.0);
        assert_eq!(disjunctive_reach(&[]).unwrap(), 0.0);
        assert_eq!(disjunctive_reach(&[1.2]), Err(Error::OutOfRange(1.2)));
    }

    #[test]
    fn max_reach_running_example() {
        let m = running_example();
        let goal = mask(5, &[4]);
        let choices: Vec<Vec<Choice>> = (0..5)
            .map(|s| (0..m.actions(s).len()).map(|a| Choice::action(&m, s, a)).collect())
            .collect();
        let mr = max_reach(&goal, &choices).unwrap();
        assert!((mr.values[0] - 0.9).abs() < 1e-12);
        let pol = mr.policy(&choices);
        assert_eq!(pol, land_policy(&m));
    }

    #[test]
    fn max_reach_avoids_zero_gain_loops() {
        // state 0: "loop" stays (prob 1), "go" reaches goal w.p. 0.5
        let goal = vec![false, true, false];
        let choices = vec![
            vec![
                Choice { dist: vec![1.0, 0.0], row: vec![(0, 1.0)] },
                Choice { dist: vec![0.0, 1.0], row: vec![(1, 0.5), (2, 0.5)] },
            ],
            vec![Choice { dist: vec![1.0], row: vec![(1, 1.0)] }],
            vec![Choice { dist: vec![1.0], row: vec![(2, 1.0)] }],
        ];
        let mr = max_reach(&goal, &choices).unwrap();
        assert_eq!(mr.chosen[0], 1);
        assert!((mr.values[0] - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn disjunctive_is_monotone(p in proptest::collection::vec(0.0f64..=1.0, 1..6), i in 0usize..6, bump in 0.0f64..1.0) {
            let base = disjunctive_reach(&p).unwrap();
            let mut q = p.clone();
            let k = i % q.len();
            q[k] = (q[k] + bump).min(1.0);
            prop_assert!(disjunctive_reach(&q).unwrap() >= base - 1e-15);
            prop_assert!((disjunctive_reach(&p[..1]).unwrap() - p[0]).abs() < 1e-15);
        }
    }
}
