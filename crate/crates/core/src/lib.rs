//! Deceptive policy synthesis for teams of MDP agents.
//!
//! A team of agents, each governed by its own finite MDP and assigned a
//! reference policy by a supervisor, jointly needs at least one member to
//! reach a covert target set with probability `nu_A`. This crate synthesizes
//! decentralized stationary policies that minimize the worst-case path-level
//! KL divergence from the references, and extends the synthesis to survive
//! a Bayesian supervisor that eliminates agents under a utility budget by
//! allocating decoys.
//!
//! The crate is `no_std` (it needs `alloc`). Convex programs are assembled
//! here and handed to any [`ConicSolver`] implementation; the companion
//! `shotgun` crate provides one backed by an interior-point solver.

#![no_std]

extern crate alloc;

mod error;
pub(crate) mod math;

pub mod chain;
pub mod conic;
pub mod delivery;
pub mod linalg;
pub mod mdp;
pub mod occupancy;
pub mod path;
pub mod reach;
pub mod refpol;
pub mod subproblem;
pub mod supervisor;
pub mod synthesis;

pub use chain::{decompose, induced_chain, Decomposition, MarkovChain, StateRole};
pub use conic::{Cone, ConicProgram, ConicSolution, ConicSolver, SolveStatus, ToleranceSet};
pub use error::{Error, Result};
pub use mdp::{Action, Mdp, MdpBuilder, StateId, StationaryPolicy};
pub use occupancy::{kl_occupancy, occupancy_from_policy, policy_from_occupancy, OccupancyVector};
pub use path::{path_llr, PathRecord};
pub use reach::{disjunctive_reach, reach_probability};
pub use subproblem::{compute_kmax, policy_with_kl, reach_subproblem, AgentSpec, Kmax, SubproblemSolution};
pub use synthesis::{
    bisection, deceptive_subset_selection, deceptive_synthesis, kmax_for_decoys, reach_evaluate,
    reach_evaluate_sub, subset_search, DecoyRow, EliminationResult, SynthesisResult, TeamProblem,
};
