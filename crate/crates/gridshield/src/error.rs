use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("case schema violation at {path}: {message}")]
    Schema { path: String, message: String },

    #[error("unobservable system: rank(H̄) = {rank}, need {need}")]
    Unobservable { rank: usize, need: usize },

    #[error("infeasible profile: {0}")]
    InfeasibleProfile(String),

    #[error("placement generation failed after {attempts} attempts: {reason}")]
    GenerationExhausted { attempts: usize, reason: String },

    #[error("nonpositive perturbed admittance on line {line}: y + eps = {value}")]
    NonpositiveAdmittance { line: String, value: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("size guard violated: {0}")]
    SizeGuard(String),

    #[error("target not attackable with available knowledge")]
    NotAttackable,

    #[error("{0} is not a P2-type vertex; use the min-cut attack instead")]
    NotP2Type(String),

    #[error("exact line knowledge missing for crossing line {0}")]
    Theorem1Violation(String),

    #[error("pure CTI cannot protect P2-type vertices: {0}")]
    P2NotCtiProtectable(String),

    #[error("targets cannot be defended with given candidates")]
    Undefendable,

    #[error("milp: {0}")]
    Milp(String),

    #[error("pmu references nonexistent bus {0}")]
    UnknownPmuBus(String),

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GridError>;
