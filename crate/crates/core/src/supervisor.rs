//! The supervisor's side: Bayesian beliefs over observed paths, their
//! policy-level proxy, and budget-constrained elimination.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, ln};
use crate::mdp::{Action, Mdp, StationaryPolicy};
use crate::path::{LlrTable, PathRecord};
use crate::{Error, Result};

/// Relative slack on the capacity test, shared by both eliminators so they
/// agree on boundary instances.
const CAPACITY_SLACK: f64 = 1e-12;

/// Posterior probability of honesty given the total log-likelihood ratio.
pub fn belief_from_llr(prior: f64, total_llr: f64) -> f64 {
    if total_llr == f64::NEG_INFINITY {
        return 1.0;
    }
    if prior >= 1.0 {
        return 0.0;
    }
    // logistic form of 1 - p / (p + (1 - p) e^-L); no cancellation for large L
    let theta = 1.0 / (1.0 + prior / (1.0 - prior) * exp(total_llr));
    theta.clamp(0.0, 1.0)
}

/// Belief after observing `paths`, scored between `deceptive` and
/// `reference`.
pub fn belief_update(
    prior: f64,
    paths: &[PathRecord],
    deceptive: &StationaryPolicy,
    reference: &StationaryPolicy,
    m: &Mdp,
) -> Result<f64> {
    let table = LlrTable::new(m, deceptive, reference)?;
    belief_update_with(prior, paths, &table)
}

pub fn belief_update_with(prior: f64, paths: &[PathRecord], table: &LlrTable) -> Result<f64> {
    let mut total = 0.0;
    for p in paths {
        if p.truncated {
            return Err(Error::TruncatedPath);
        }
        total += p.llr(table)?;
    }
    Ok(belief_from_llr(prior, total))
}

/// `1 - p / (p + (1 - p) exp(-m_r kl))`.
pub fn belief_proxy(prior: f64, rounds: u32, kl: f64) -> f64 {
    belief_from_llr(prior, rounds as f64 * kl)
}

/// Beliefs about a team, updated by value.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub beliefs: Vec<f64>,
    pub priors: Vec<f64>,
    pub observed_rounds: u32,
    llr_sums: Vec<f64>,
}

impl BeliefState {
    pub fn new(priors: Vec<f64>) -> Self {
        Self {
            beliefs: priors.iter().map(|p| 1.0 - p).collect(),
            llr_sums: vec![0.0; priors.len()],
            priors,
            observed_rounds: 0,
        }
    }

    /// Incorporate one round of per-agent log-likelihood ratios.
    pub fn observe(&self, llrs: &[f64]) -> Self {
        let llr_sums: Vec<f64> = self.llr_sums.iter().zip(llrs).map(|(a, b)| a + b).collect();
        Self {
            beliefs: self
                .priors
                .iter()
                .zip(&llr_sums)
                .map(|(&p, &l)| belief_from_llr(p, l))
                .collect(),
            priors: self.priors.clone(),
            observed_rounds: self.observed_rounds + 1,
            llr_sums,
        }
    }
}

fn fits(total: f64, capacity: f64) -> bool {
    total <= capacity + CAPACITY_SLACK * capacity.abs().max(1.0)
}

/// Eliminate agents in increasing order of belief while the total belief
/// stays within `capacity`. Returns ascending agent indices.
pub fn eliminate_greedy(beliefs: &[f64], capacity: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beliefs.len()).collect();
    order.sort_by(|&a, &b| beliefs[a].total_cmp(&beliefs[b]).then(a.cmp(&b)));
    let mut total = 0.0;
    let mut chosen = Vec::new();
    for i in order {
        if !fits(total + beliefs[i], capacity) {
            break;
        }
        total += beliefs[i];
        chosen.push(i);
    }
    chosen.sort_unstable();
    chosen
}

/// Exact elimination by enumeration: maximize `sum -ln(theta_i)` subject to
/// `sum theta_i V_i <= capacity`, ties to the lexicographically smallest set.
pub fn eliminate_general(beliefs: &[f64], utilities: &[f64], capacity: f64) -> Result<Vec<usize>> {
    let n = beliefs.len();
    if n > 20 {
        return Err(Error::TooManyAgents(n));
    }
    if utilities.len() != n {
        return Err(Error::InvalidParams(format!("{} utilities for {n} agents", utilities.len())));
    }
    let profit: Vec<f64> = beliefs.iter().map(|&t| if t <= 0.0 { f64::INFINITY } else { -ln(t) }).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1u32 << n) {
        let set: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let weight: f64 = set.iter().map(|&i| beliefs[i] * utilities[i]).sum();
        if !fits(weight, capacity) {
            continue;
        }
        let value: f64 = set.iter().map(|&i| profit[i]).sum();
        let better = match &best {
            None => true,
            Some((v, s)) => value > *v || (value == *v && set < *s),
        };
        if better {
            best = Some((value, set));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

/// One item of a knapsack instance encoded as an agent the supervisor
/// observes once.
#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackGadget {
    pub mdp: Mdp,
    pub reference: StationaryPolicy,
    pub deceptive: StationaryPolicy,
    pub path: PathRecord,
    pub utility: f64,
    pub prior: f64,
}

impl KnapsackGadget {
    pub fn belief(&self) -> Result<f64> {
        belief_update(self.prior, core::slice::from_ref(&self.path), &self.deceptive, &self.reference, &self.mdp)
    }

    /// The `(weight, profit)` pair the elimination problem sees.
    pub fn realized(&self) -> Result<(f64, f64)> {
        let theta = self.belief()?;
        Ok((theta * self.utility, -ln(theta)))
    }
}

/// Encode a knapsack instance as agents whose beliefs are `exp(-profit)`
/// and whose utilities make `theta * V` equal the weight.
pub fn knapsack_fixture(weights: &[f64], profits: &[f64], kappa: f64) -> Result<Vec<KnapsackGadget>> {
    if weights.len() != profits.len() {
        return Err(Error::InvalidParams(format!(
            "{} weights but {} profits",
            weights.len(),
            profits.len()
        )));
    }
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidParams(format!("prior {kappa} outside (0, 1)")));
    }
    let mut out = Vec::with_capacity(weights.len());
    for (index, (&w, &p)) in weights.iter().zip(profits).enumerate() {
        if !(w > 0.0 && p > 0.0) {
            return Err(Error::InvalidParams(format!("item {index} needs positive weight and profit")));
        }
        let theta = exp(-p);
        let ratio = theta * kappa / ((1.0 - theta) * (1.0 - kappa));
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::KappaTooLarge { index, kappa });
        }
        let names = vec!["o".into(), "a".into(), "b".into()];
        let actions = vec![
            vec![Action::new("1", [(1, 1.0)]), Action::new("2", [(2, 1.0)])],
            vec![Action::new("stay", [(1, 1.0)])],
            vec![Action::new("stay", [(2, 1.0)])],
        ];
        let mdp = Mdp::new(names, actions, 0)?;
        let reference = StationaryPolicy::new(vec![vec![ratio, 1.0 - ratio], vec![1.0], vec![1.0]]);
        let deceptive = StationaryPolicy::deterministic(&mdp, &[0, 0, 0]);
        out.push(KnapsackGadget {
            mdp,
            reference,
            deceptive,
            path: PathRecord::new(vec![0, 1, 1], false),
            utility: w / theta,
            prior: kappa,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::*;
    use proptest::prelude::*;

    #[test]
    fn belief_examples() {
        let m = running_example();
        let path = PathRecord::new(vec![0, 1, 4], false);
        let theta = belief_update(0.5, core::slice::from_ref(&path), &land_policy(&m), &reference_1(&m), &m).unwrap();
        assert!((theta - 1.0 / 6.0).abs() < 1e-12);
        let same = belief_update(0.3, &[path], &reference_1(&m), &reference_1(&m), &m).unwrap();
        assert!((same - 0.7).abs() < 1e-12);
        let impossible = PathRecord::new(vec![0, 1, 2], false);
        assert_eq!(belief_update(0.5, &[impossible], &land_policy(&m), &reference_1(&m), &m).unwrap(), 1.0);
        let cut = PathRecord::new(vec![0], true);
        assert_eq!(
            belief_update(0.5, &[cut], &land_policy(&m), &reference_1(&m), &m),
            Err(Error::TruncatedPath)
        );
    }

    #[test]
    fn proxy_examples() {
        assert!((belief_proxy(0.3, 4, 0.0) - 0.7).abs() < 1e-15);
        assert!((belief_proxy(0.5, 1, ln(5.0)) - 1.0 / 6.0).abs() < 1e-12);
        assert!(belief_proxy(0.5, 1, 1e6) < 1e-12);
    }

    #[test]
    fn belief_state_accumulates() {
        let s = BeliefState::new(vec![0.5, 0.2]);
        assert_eq!(s.beliefs, vec![0.5, 0.8]);
        let s2 = s.observe(&[ln(5.0), 0.0]).observe(&[0.0, 0.0]);
        assert_eq!(s2.observed_rounds, 2);
        assert!((s2.beliefs[0] - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(s.observed_rounds, 0);
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(eliminate_greedy(&[0.2, 0.5, 0.9], 0.75), vec![0, 1]);
        assert_eq!(eliminate_greedy(&[0.2, 0.5, 0.9], 0.0), Vec::<usize>::new());
        assert_eq!(eliminate_greedy(&[0.2, 0.5, 0.9], 1.6), vec![0, 1, 2]);
    }

    #[test]
    fn greedy_matches_subset_oracle() {
        let theta = [0.2, 0.5, 0.9];
        let mut best = (f64::NEG_INFINITY, 0u32);
        for mask in 0u32..8 {
            let w: f64 = (0..3).filter(|i| mask >> i & 1 == 1).map(|i| theta[i]).sum();
            let p: f64 = (0..3).filter(|i| mask >> i & 1 == 1).map(|i| -ln(theta[i])).sum();
            if w <= 0.75 && p > best.0 {
                best = (p, mask);
            }
        }
        assert_eq!(best.1, 0b011);
    }

    #[test]
    fn general_examples() {
        assert_eq!(eliminate_general(&[0.5, 0.5], &[1.0, 10.0], 1.0).unwrap(), vec![0]);
        assert_eq!(eliminate_general(&[0.4], &[2.0], 0.8).unwrap(), vec![0]);
        assert_eq!(eliminate_general(&[0.5; 21], &[1.0; 21], 1.0), Err(Error::TooManyAgents(21)));
    }

    #[test]
    fn fixture_example() {
        let g = knapsack_fixture(&[1.0], &[ln(2.0)], 0.1).unwrap();
        let theta = g[0].belief().unwrap();
        assert!((theta - 0.5).abs() < 1e-12);
        assert!((g[0].utility - 2.0).abs() < 1e-12);
        assert!(matches!(knapsack_fixture(&[1.0], &[0.01], 0.9), Err(Error::KappaTooLarge { index: 0, .. })));
    }

    #[test]
    fn equal_items_fill_in_index_order() {
        let g = knapsack_fixture(&[1.0; 4], &[0.5; 4], 0.1).unwrap();
        let theta: Vec<f64> = g.iter().map(|x| x.belief().unwrap()).collect();
        let v: Vec<f64> = g.iter().map(|x| x.utility).collect();
        assert_eq!(eliminate_general(&theta, &v, 2.0).unwrap(), vec![0, 1]);
    }

    proptest! {
        #[test]
        fn proxy_order_matches_kl_order(p in 0.01f64..0.99, rounds in 1u32..10, k1 in 0.0f64..5.0, k2 in 0.0f64..5.0) {
            prop_assume!((k1 - k2).abs() > 1e-9);
            let (a, b) = (belief_proxy(p, rounds, k1), belief_proxy(p, rounds, k2));
            prop_assert_eq!(a > b, k1 < k2);
        }

        #[test]
        fn greedy_respects_capacity(theta in proptest::collection::vec(0.0f64..1.0, 0..12), c in 0.0f64..4.0) {
            let t = eliminate_greedy(&theta, c);
            let total: f64 = t.iter().map(|&i| theta[i]).sum();
            prop_assert!(total <= c + 1e-9);
            for i in (0..theta.len()).filter(|i| !t.contains(i)) {
                prop_assert!(total + theta[i] > c);
            }
        }

        #[test]
        fn greedy_equals_exact_with_equal_utilities(theta in proptest::collection::vec(0.001f64..1.0, 1..10), c in 0.0f64..3.0) {
            let v = vec![1.0; theta.len()];
            prop_assert_eq!(eliminate_greedy(&theta, c), eliminate_general(&theta, &v, c).unwrap());
        }

        #[test]
        fn fixture_roundtrip(w in proptest::collection::vec(0.1f64..5.0, 1..6), p in proptest::collection::vec(0.05f64..3.0, 6)) {
            let profits = &p[..w.len()];
            let g = knapsack_fixture(&w, profits, 0.02).unwrap();
            for (i, gadget) in g.iter().enumerate() {
                let (wi, pi) = gadget.realized().unwrap();
                prop_assert!((wi - w[i]).abs() < 1e-9);
                prop_assert!((pi - profits[i]).abs() < 1e-9);
            }
        }
    }
}
