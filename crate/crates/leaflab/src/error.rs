use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("non-integer exponent at byte {offset}")]
    NonIntegerExponent { offset: usize },

    #[error("domain error: {0}")]
    Domain(&'static str),

    #[error("arity mismatch: expression over {expected} coordinates evaluated on {got}")]
    Arity { expected: usize, got: usize },

    #[error("projection onto the level set failed after {iterations} iterations (residual {residual:.3e})")]
    ProjectionFailed { iterations: usize, residual: f64 },

    #[error("point is off the manifold: constraint residual {residual:.3e} exceeds {tol:.3e}")]
    OffManifold { residual: f64, tol: f64 },

    #[error(
        "not a regular level set: constraint Jacobian rank-deficient (sigma ratio {ratio:.3e})"
    )]
    NotRegularLevelSet { ratio: f64 },

    #[error("ambiguous numerical rank {rank} (odd); singular values {spectrum:?}")]
    RankAmbiguity { rank: usize, spectrum: Vec<f64> },

    #[error(
        "kernel rank drifted during leaf tracing: expected dimension {expected}, found {found}"
    )]
    RankDrift { expected: usize, found: usize },

    #[error("numeric flow diverged: {0}")]
    FlowDiverged(String),

    #[error(
        "optimization did not converge: best projected-gradient norm {best_grad:.3e} over {restarts} restarts near {best_point:?}"
    )]
    OptimizationFailed {
        best_grad: f64,
        restarts: usize,
        best_point: Vec<f64>,
    },

    #[error("sampling failed: no accepted point within {attempts} attempts")]
    SamplingExhausted { attempts: usize },

    #[error("no symplectic pairing declared for the ambient space")]
    NoPairing,

    #[error("invalid scenario field `{field}`: {message}")]
    Scenario { field: String, message: String },

    #[error("scenario not found (no catalog entry or readable file): {0}")]
    ScenarioNotFound(String),

    #[error("failed to parse scenario: {0}")]
    ScenarioParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
