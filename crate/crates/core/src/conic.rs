//! Solver-agnostic description of the conic programs posed by the
//! subproblem layer.
//!
//! A program is `min 1/2 z'Pz + c'z` subject to `A z + s = b` with the
//! slack `s` in a product of cones, listed in row order.

use alloc::string::String;
use alloc::vec::Vec;

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `s = 0` on the next `n` rows.
    Zero(usize),
    /// `s >= 0` on the next `n` rows.
    Nonnegative(usize),
    /// Three rows `(s1, s2, s3)` with `s2 * exp(s1 / s2) <= s3`, `s2 > 0`.
    Exponential,
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonnegative(n) => n,
            Cone::Exponential => 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    /// Upper-triangular entries of `P` as `(row, col, value)`.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<f64>,
    /// Entries of `A` as `(row, col, value)`; duplicates are summed.
    pub constraints: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            linear: alloc::vec![0.0; num_vars],
            ..Self::default()
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Append one cone block. `rows[k]` holds the `A` entries and `b` value
    /// of the block's `k`-th row.
    pub fn push_block(&mut self, cone: Cone, rows: Vec<(Vec<(usize, f64)>, f64)>) {
        debug_assert_eq!(cone.rows(), rows.len());
        for (entries, b) in rows {
            let r = self.rhs.len();
            for (c, v) in entries {
                self.constraints.push((r, c, v));
            }
            self.rhs.push(b);
        }
        match (self.cones.last_mut(), cone) {
            (Some(Cone::Zero(n)), Cone::Zero(m)) => *n += m,
            (Some(Cone::Nonnegative(n)), Cone::Nonnegative(m)) => *n += m,
            _ => self.cones.push(cone),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub primal: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSet {
    pub gap: f64,
    pub feas: f64,
    /// Slack allowed on the KL budget when re-evaluating a solution.
    pub kl: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        Self { gap: 1e-8, feas: 1e-8, kl: 1e-6 }
    }
}

/// A backend able to solve [`ConicProgram`]s.
pub trait ConicSolver: Sync {
    fn solve(&self, program: &ConicProgram, tol: &ToleranceSet) -> Result<ConicSolution>;

    fn name(&self) -> String {
        String::from("conic")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn blocks_merge_adjacent_cones() {
        let mut p = ConicProgram::new(2);
        p.push_block(Cone::Zero(1), vec![(vec![(0, 1.0)], 1.0)]);
        p.push_block(Cone::Zero(1), vec![(vec![(1, 1.0)], 0.0)]);
        p.push_block(Cone::Exponential, vec![(vec![], 0.0), (vec![(0, -1.0)], 0.0), (vec![(1, -1.0)], 0.0)]);
        assert_eq!(p.cones, vec![Cone::Zero(2), Cone::Exponential]);
        assert_eq!(p.num_rows(), 5);
        assert_eq!(p.cones.iter().map(Cone::rows).sum::<usize>(), 5);
    }
}
