//! Clarabel-backed conic solver and a rayon executor for the core crate.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use shotgun_core::synthesis::Parallel;
use shotgun_core::{Cone, ConicProgram, ConicSolution, ConicSolver, Error, Result, SolveStatus, ToleranceSet};

/// Environment variable that turns on solver iteration logs when set to a
/// non-empty value other than `0`.
pub const VERBOSE_ENV: &str = "SHOTGUN_SOLVER_VERBOSE";

/// Interior-point solver for the exponential-cone programs built by the core
/// crate. Each call creates a fresh solver instance, so one value can be
/// shared across threads.
#[derive(Debug, Clone, Copy)]
pub struct ClarabelSolver {
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for ClarabelSolver {
    fn default() -> Self {
        Self { max_iter: 200, verbose: verbose_from_env() }
    }
}

fn verbose_from_env() -> bool {
    std::env::var(VERBOSE_ENV).map(|v| !v.is_empty() && v != "0").unwrap_or(false)
}

fn triplets(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> CscMatrix<f64> {
    let mut i = Vec::with_capacity(entries.len());
    let mut j = Vec::with_capacity(entries.len());
    let mut v = Vec::with_capacity(entries.len());
    for &(r, c, x) in entries {
        i.push(r);
        j.push(c);
        v.push(x);
    }
    CscMatrix::new_from_triplets(rows, cols, i, j, v)
}

impl ConicSolver for ClarabelSolver {
    fn solve(&self, program: &ConicProgram, tol: &ToleranceSet) -> Result<ConicSolution> {
        let n = program.num_vars;
        let m = program.num_rows();
        let declared: usize = program.cones.iter().map(Cone::rows).sum();
        if declared != m || program.linear.len() != n {
            return Err(Error::SolverFailure(format!(
                "malformed program: {m} rows, cones cover {declared}, {n} vars, {} costs",
                program.linear.len()
            )));
        }
        for &(r, c, _) in &program.quadratic {
            if r > c || c >= n {
                return Err(Error::SolverFailure(format!("quadratic entry ({r}, {c}) not upper triangular")));
            }
        }
        let p = triplets(n, n, &program.quadratic);
        let a = triplets(m, n, &program.constraints);
        let cones: Vec<SupportedConeT<f64>> = program
            .cones
            .iter()
            .map(|c| match *c {
                Cone::Zero(k) => SupportedConeT::ZeroConeT(k),
                Cone::Nonnegative(k) => SupportedConeT::NonnegativeConeT(k),
                Cone::Exponential => SupportedConeT::ExponentialConeT(),
            })
            .collect();
        let settings = DefaultSettings {
            verbose: self.verbose,
            max_iter: self.max_iter,
            tol_gap_abs: tol.gap,
            tol_gap_rel: tol.gap,
            tol_feas: tol.feas,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&p, &program.linear, &a, &program.rhs, &cones, settings)
            .map_err(|e| Error::SolverFailure(format!("{e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            other => return Err(Error::SolverFailure(format!("clarabel: {other:?}"))),
        };
        Ok(ConicSolution { primal: sol.x.clone(), objective: sol.obj_val, status })
    }

    fn name(&self) -> String {
        "clarabel".into()
    }
}

/// Runs independent jobs on the global rayon pool, or on a dedicated pool
/// when built with [`Rayon::in_pool`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Rayon<'a> {
    pool: Option<&'a rayon::ThreadPool>,
}

impl<'a> Rayon<'a> {
    pub fn global() -> Self {
        Self { pool: None }
    }

    pub fn in_pool(pool: &'a rayon::ThreadPool) -> Self {
        Self { pool: Some(pool) }
    }
}

impl Parallel for Rayon<'_> {
    fn map_indexed<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        use rayon::prelude::*;
        let run = || (0..n).into_par_iter().map(f).collect();
        match self.pool {
            Some(p) => p.install(run),
            None => run(),
        }
    }
}
