//! Sampled paths and their log-likelihood ratios.

use alloc::vec::Vec;

use crate::chain::{induced_chain, MarkovChain};
use crate::math::ln;
use crate::mdp::{Mdp, StateId, StationaryPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PathRecord {
    pub states: Vec<StateId>,
    /// Set when sampling stopped at the step cap before absorption.
    pub truncated: bool,
}

impl PathRecord {
    pub fn new(states: Vec<StateId>, truncated: bool) -> Self {
        Self { states, truncated }
    }

    pub fn last(&self) -> StateId {
        *self.states.last().expect("paths are nonempty")
    }

    pub fn visits(&self, set: &[StateId]) -> bool {
        self.states.iter().any(|s| set.contains(s))
    }

    pub fn llr(&self, table: &LlrTable) -> Result<f64> {
        table.llr(&self.states)
    }
}

/// The two induced chains needed to score paths, built once and reused.
#[derive(Debug, Clone)]
pub struct LlrTable {
    deceptive: MarkovChain,
    reference: MarkovChain,
}

impl LlrTable {
    pub fn new(m: &Mdp, deceptive: &StationaryPolicy, reference: &StationaryPolicy) -> Result<Self> {
        Ok(Self {
            deceptive: induced_chain(m, deceptive)?,
            reference: induced_chain(m, reference)?,
        })
    }

    /// `sum_t ln pi^A(s_t, s_t+1) - ln pi^S(s_t, s_t+1)`.
    ///
    /// Steps impossible under the deceptive chain make the ratio `-inf`;
    /// steps the reference never takes are an error.
    pub fn llr(&self, states: &[StateId]) -> Result<f64> {
        let mut total = 0.0;
        for (t, w) in states.windows(2).enumerate() {
            let (s, q) = (w[0], w[1]);
            if self.deceptive.is_absorbing(s) && self.reference.is_absorbing(s) {
                break;
            }
            let pa = self.deceptive.prob(s, q);
            let ps = self.reference.prob(s, q);
            if pa <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            if ps <= 0.0 {
                return Err(Error::InfeasibleUnderReference { step: t });
            }
            total += ln(pa) - ln(ps);
        }
        Ok(total)
    }
}

/// Log-likelihood ratio of `path` between `deceptive` and `reference`.
pub fn path_llr(path: &[StateId], deceptive: &StationaryPolicy, reference: &StationaryPolicy, m: &Mdp) -> Result<f64> {
    LlrTable::new(m, deceptive, reference)?.llr(path)
}
