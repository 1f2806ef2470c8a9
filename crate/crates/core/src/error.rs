use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("pilot overhead infeasible: {users} users x {guard} guard bins exceed {bins} DD bins")]
    OverheadInfeasible { users: usize, guard: usize, bins: usize },

    #[error("guard span {guard} Doppler bins does not fit in a frame of {n} bins")]
    GuardExceedsFrame { guard: usize, n: usize },

    #[error("invalid channel statistics: {0}")]
    InvalidStatistics(String),

    #[error("power control undefined at AP {ap}: all estimate variances are zero")]
    DegeneratePowerControl { ap: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{lemma} violated: deviation {deviation:e} exceeds tolerance {tolerance:e}")]
    IdentityViolation {
        lemma: &'static str,
        deviation: f64,
        tolerance: f64,
    },

    #[error("empty sample set")]
    EmptySamples,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
