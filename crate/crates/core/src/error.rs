use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("RowNotStochastic({state}, {action}): row sums to {sum}, expected 1")]
    RowNotStochastic { state: String, action: String, sum: f64 },

    #[error("EmptyActionSet({state}): state has no actions")]
    EmptyActionSet { state: String },

    #[error("UnknownState: {0}")]
    UnknownState(String),

    #[error("unknown action {action} at state {state}")]
    UnknownAction { state: String, action: String },

    #[error("invalid transition probability {value} on ({state}, {action})")]
    InvalidProbability { state: String, action: String, value: f64 },

    #[error("policy does not match the MDP at state {state}: {reason}")]
    PolicyMismatch { state: String, reason: &'static str },

    #[error("target state {0} is not absorbing")]
    NonAbsorbingTarget(String),

    #[error("occupancy is infinite at state {0}: the policy is recurrent inside the deviation set")]
    InfiniteOccupancy(String),

    #[error("negative occupancy {value} at ({state}, {action})")]
    NegativeEntry { state: String, action: String, value: f64 },

    #[error("value {0} outside [0, 1]")]
    OutOfRange(f64),

    #[error("path step {step} is impossible under the sampling policy")]
    InfeasiblePath { step: usize },

    #[error("path step {step} has zero probability under the reference policy")]
    InfeasibleUnderReference { step: usize },

    #[error("path was truncated before absorption")]
    TruncatedPath,

    #[error("exhaustive elimination supports at most 20 agents, got {0}")]
    TooManyAgents(usize),

    #[error("prior {kappa} is too large for knapsack item {index}")]
    KappaTooLarge { index: usize, kappa: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("delivery graph is invalid: {0}")]
    InvalidGraph(String),

    #[error("supervisor target of agent {0} is unreachable")]
    UnreachableTarget(usize),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("upper bound {upper} is not feasible (evaluation {value})")]
    UpperBoundNotFeasible { upper: f64, value: f64 },

    #[error("target KL {target} exceeds attainable KL {attainable}")]
    TargetUnattainable { target: f64, attainable: f64 },

    #[error("every decoy count failed")]
    AllFailed,

    #[error("supervisor task for agent {agent} is infeasible: max reach {max_reach} < {threshold}")]
    InfeasibleSupervisorTask { agent: usize, max_reach: f64, threshold: f64 },
}
