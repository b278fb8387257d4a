//! Induced Markov chains, communicating classes and the deviation-set
//! decomposition.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::{Error, Result};

/// Sparse row-stochastic matrix over the states of an MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    rows: Vec<Vec<(StateId, f64)>>,
}

impl MarkovChain {
    pub fn from_rows(rows: Vec<Vec<(StateId, f64)>>) -> Self {
        Self { rows }
    }

    pub fn num_states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, s: StateId) -> &[(StateId, f64)] {
        &self.rows[s]
    }

    pub fn prob(&self, s: StateId, q: StateId) -> f64 {
        match self.rows[s].binary_search_by_key(&q, |e| e.0) {
            Ok(i) => self.rows[s][i].1,
            Err(_) => 0.0,
        }
    }

    pub fn is_absorbing(&self, s: StateId) -> bool {
        self.rows[s].iter().all(|&(q, p)| q == s || p == 0.0)
    }

    /// Strongly connected components of the support graph, in Tarjan's
    /// reverse topological order.
    pub fn strongly_connected_components(&self) -> Vec<Vec<StateId>> {
        tarjan(&self.rows)
    }

    /// Union of the closed communicating classes: components with no
    /// positive-probability edge leaving them.
    pub fn closed_states(&self) -> Vec<bool> {
        let n = self.rows.len();
        let mut comp = vec![usize::MAX; n];
        let sccs = self.strongly_connected_components();
        for (c, members) in sccs.iter().enumerate() {
            for &s in members {
                comp[s] = c;
            }
        }
        let mut closed = vec![false; n];
        for (c, members) in sccs.iter().enumerate() {
            let leaves = members
                .iter()
                .any(|&s| self.rows[s].iter().any(|&(q, p)| p > 0.0 && comp[q] != c));
            if !leaves {
                for &s in members {
                    closed[s] = true;
                }
            }
        }
        closed
    }

    /// States reachable from `start` by positive-probability steps, moving
    /// only through states where `through` holds (the start is always
    /// expanded).
    pub fn reachable_from(&self, start: StateId, through: impl Fn(StateId) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.rows.len()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(s) = stack.pop() {
            if s != start && !through(s) {
                continue;
            }
            for &(q, p) in &self.rows[s] {
                if p > 0.0 && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        seen
    }

    /// States that can reach `goal` with positive probability.
    pub fn can_reach(&self, goal: &[bool]) -> Vec<bool> {
        let n = self.rows.len();
        let mut preds: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for (s, row) in self.rows.iter().enumerate() {
            for &(q, p) in row {
                if p > 0.0 {
                    preds[q].push(s);
                }
            }
        }
        let mut mark = goal.to_vec();
        let mut stack: Vec<StateId> = (0..n).filter(|&s| goal[s]).collect();
        while let Some(q) = stack.pop() {
            for &s in &preds[q] {
                if !mark[s] {
                    mark[s] = true;
                    stack.push(s);
                }
            }
        }
        mark
    }
}

fn tarjan(rows: &[Vec<(StateId, f64)>]) -> Vec<Vec<StateId>> {
    let n = rows.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0usize;
    // (node, position in its row)
    let mut call: Vec<(StateId, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&(v, pos)) = call.last() {
            let row = &rows[v];
            if pos < row.len() {
                let (w, p) = row[pos];
                if let Some(top) = call.last_mut() {
                    top.1 += 1;
                }
                if p <= 0.0 {
                    continue;
                }
                if index[w] == usize::MAX {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    let mut comp = Vec::new();
                    loop {
                        let w = stack.pop().expect("tarjan stack");
                        on_stack[w] = false;
                        comp.push(w);
                        if w == v {
                            break;
                        }
                    }
                    comp.sort_unstable();
                    out.push(comp);
                }
            }
        }
    }
    out
}

/// `pi_{s,q} = sum_a P(s, a, q) * pi(s, a)`.
pub fn induced_chain(m: &Mdp, pol: &StationaryPolicy) -> Result<MarkovChain> {
    pol.validate_for(m)?;
    Ok(induced_chain_unchecked(m, pol))
}

pub(crate) fn induced_chain_unchecked(m: &Mdp, pol: &StationaryPolicy) -> MarkovChain {
    let rows = (0..m.num_states())
        .map(|s| {
            let mut row: Vec<(StateId, f64)> = Vec::new();
            for (a, act) in m.actions(s).iter().enumerate() {
                let w = pol.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                for &(q, p) in &act.successors {
                    row.push((q, w * p));
                }
            }
            row.sort_by_key(|e| e.0);
            let mut merged: Vec<(StateId, f64)> = Vec::with_capacity(row.len());
            for (q, p) in row {
                match merged.last_mut() {
                    Some(last) if last.0 == q => last.1 += p,
                    _ => merged.push((q, p)),
                }
            }
            merged.retain(|e| e.1 > 0.0);
            merged
        })
        .collect();
    MarkovChain { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateRole {
    /// In the agent's target set `R^A`.
    Target,
    /// In a closed communicating class of the reference chain.
    Closed,
    /// Transient under the reference; the deceptive policy may deviate here.
    Deviation,
}

/// Three-way split `S = R^A ∪ C^cl ∪ S_d`, targets taking priority.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    roles: Vec<StateRole>,
    deviation: Vec<StateId>,
    position: Vec<Option<usize>>,
    targets: Vec<StateId>,
}

impl Decomposition {
    pub fn role(&self, s: StateId) -> StateRole {
        self.roles[s]
    }

    /// `S_d`, ascending.
    pub fn deviation_states(&self) -> &[StateId] {
        &self.deviation
    }

    /// Index of `s` within [`Self::deviation_states`].
    pub fn position(&self, s: StateId) -> Option<usize> {
        self.position[s]
    }

    pub fn targets(&self) -> &[StateId] {
        &self.targets
    }

    pub fn is_target(&self, s: StateId) -> bool {
        self.roles[s] == StateRole::Target
    }

    pub fn closed_states(&self) -> Vec<StateId> {
        (0..self.roles.len()).filter(|&s| self.roles[s] == StateRole::Closed).collect()
    }
}

/// Split the state space by the chain that `reference` induces on `m`.
pub fn decompose(m: &Mdp, reference: &StationaryPolicy, targets: &[StateId]) -> Result<Decomposition> {
    let chain = induced_chain(m, reference)?;
    for &t in targets {
        if t >= m.num_states() {
            return Err(Error::UnknownState(alloc::format!("#{t}")));
        }
        if !m.is_absorbing(t) {
            return Err(Error::NonAbsorbingTarget(m.state_name(t).to_string()));
        }
    }
    let closed = chain.closed_states();
    let mut roles = vec![StateRole::Deviation; m.num_states()];
    for (s, role) in roles.iter_mut().enumerate() {
        if closed[s] {
            *role = StateRole::Closed;
        }
    }
    let mut target_list: Vec<StateId> = targets.to_vec();
    target_list.sort_unstable();
    target_list.dedup();
    for &t in &target_list {
        roles[t] = StateRole::Target;
    }
    let deviation: Vec<StateId> = (0..m.num_states()).filter(|&s| roles[s] == StateRole::Deviation).collect();
    let mut position = vec![None; m.num_states()];
    for (i, &s) in deviation.iter().enumerate() {
        position[s] = Some(i);
    }
    Ok(Decomposition {
        roles,
        deviation,
        position,
        targets: target_list,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::*;
    use crate::mdp::MdpBuilder;

    #[test]
    fn running_example_chain() {
        let m = running_example();
        let c = induced_chain(&m, &reference_1(&m)).unwrap();
        assert!((c.prob(0, 1) - 0.9).abs() < 1e-15);
        assert!((c.prob(0, 3) - 0.1).abs() < 1e-15);
        assert!((c.prob(1, 2) - 0.8).abs() < 1e-15);
        assert!((c.prob(1, 4) - 0.2).abs() < 1e-15);
        let land = induced_chain(&m, &land_policy(&m)).unwrap();
        assert_eq!(land.prob(1, 4), 1.0);
        for s in 0..5 {
            let sum: f64 = c.row(s).iter().map(|e| e.1).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_over_identical_actions() {
        let mut b = MdpBuilder::new();
        for s in ["a", "b", "c"] {
            b.state(s);
        }
        for act in ["x", "y"] {
            b.transition("a", act, "b", 0.3).unwrap();
            b.transition("a", act, "c", 0.7).unwrap();
        }
        b.absorbing("b", "stay").unwrap();
        b.absorbing("c", "stay").unwrap();
        b.initial("a").unwrap();
        let m = b.build().unwrap();
        let c = induced_chain(&m, &StationaryPolicy::uniform(&m)).unwrap();
        assert!((c.prob(0, 1) - 0.3).abs() < 1e-15);
        assert!((c.prob(0, 2) - 0.7).abs() < 1e-15);
    }

    /// Closed classes by brute force: `s` is closed iff every state reachable
    /// from `s` can reach `s` back.
    fn closed_oracle(c: &MarkovChain) -> Vec<bool> {
        let n = c.num_states();
        let reach: Vec<Vec<bool>> = (0..n).map(|s| c.reachable_from(s, |_| true)).collect();
        (0..n).map(|s| (0..n).all(|q| !reach[s][q] || reach[q][s])).collect()
    }

    #[test]
    fn decomposition_of_running_example() {
        let m = running_example();
        let star = m.state_index("*").unwrap();
        for reference in [reference_1(&m), reference_2(&m)] {
            let d = decompose(&m, &reference, &[star]).unwrap();
            assert_eq!(d.deviation_states(), &[0, 1]);
            assert_eq!(d.closed_states(), vec![2, 3]);
            assert!(d.is_target(star));
            let c = induced_chain(&m, &reference).unwrap();
            let oracle = closed_oracle(&c);
            assert_eq!(oracle, vec![false, false, true, true, true]);
        }
    }

    #[test]
    fn absorbing_initial_state_has_no_deviation_set() {
        let mut b = MdpBuilder::new();
        b.state("s");
        b.absorbing("s", "stay").unwrap();
        b.initial("s").unwrap();
        let m = b.build().unwrap();
        let d = decompose(&m, &StationaryPolicy::uniform(&m), &[]).unwrap();
        assert!(d.deviation_states().is_empty());
    }

    #[test]
    fn non_absorbing_target_rejected() {
        let m = running_example();
        let err = decompose(&m, &reference_1(&m), &[1]).unwrap_err();
        assert_eq!(err, Error::NonAbsorbingTarget("2".into()));
    }

    #[test]
    fn tarjan_matches_oracle_on_cycles() {
        // 0 -> 1 -> 2 -> 0, 2 -> 3, 3 <-> 4
        let rows = vec![
            vec![(1, 1.0)],
            vec![(2, 1.0)],
            vec![(0, 0.5), (3, 0.5)],
            vec![(4, 1.0)],
            vec![(3, 1.0)],
        ];
        let c = MarkovChain::from_rows(rows);
        assert_eq!(c.closed_states(), closed_oracle(&c));
        let mut sccs = c.strongly_connected_components();
        sccs.sort();
        assert_eq!(sccs, vec![vec![0, 1, 2], vec![3, 4]]);
    }
}
