use crate::config::ConfigError;

pub type Result<T, E = ShotgunError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ShotgunError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Core(#[from] shotgun_core::Error),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("malformed result document {path}: {source}")]
    Document { path: String, source: serde_json::Error },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("SeedMissing: simulation needs --seed or a `seed` in the config")]
    SeedMissing,

    #[error("result document does not match its config: {0}")]
    Mismatch(String),
}

impl ShotgunError {
    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ShotgunError + '_ {
        move |source| ShotgunError::Io { path: path.display().to_string(), source }
    }

    /// Process exit status: 1 validation, 2 infeasible, 3 solver failure.
    pub fn exit_code(&self) -> i32 {
        use shotgun_core::Error as E;
        match self {
            ShotgunError::Core(e) => match e {
                E::Infeasible(_)
                | E::AllFailed
                | E::InfeasibleSupervisorTask { .. }
                | E::UpperBoundNotFeasible { .. }
                | E::TargetUnattainable { .. } => 2,
                E::SolverFailure(_) => 3,
                _ => 1,
            },
            _ => 1,
        }
    }
}
