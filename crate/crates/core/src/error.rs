use thiserror::Error;

/// Errors raised by model evaluation, particle runs, oracles and the replicate harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("epoch {epoch} outside the valid range {min}..={horizon}")]
    EpochOutOfRange {
        epoch: usize,
        min: usize,
        horizon: usize,
    },

    #[error("potential at epoch {epoch} evaluates to {value} at state {state}, outside (0, 1]")]
    PotentialOutOfRange {
        epoch: usize,
        state: String,
        value: f64,
    },

    #[error("transition density at epoch {epoch} is {value} for ({from} -> {to}); densities must be > 0")]
    NonPositiveDensity {
        epoch: usize,
        from: String,
        to: String,
        value: f64,
    },

    #[error("particle count must be at least 1")]
    EmptyPopulation,

    #[error("selection weights at epoch {epoch} are degenerate (sum = {sum})")]
    DegenerateWeights { epoch: usize, sum: f64 },

    #[error("epsilon {epsilon} at epoch {epoch} violates epsilon * max G <= 1 (max G = {max_potential})")]
    EpsilonConstraint {
        epoch: usize,
        epsilon: f64,
        max_potential: f64,
    },

    #[error("backward weights for particle {particle} at epoch {epoch} have zero normalizer")]
    ZeroBackwardNormalizer { epoch: usize, particle: usize },

    #[error("cloud history is incomplete: {0}")]
    HistoryGap(String),

    #[error("{operation} does not support {kind} functionals")]
    UnsupportedFunctional {
        operation: &'static str,
        kind: &'static str,
    },

    #[error("functional covers epochs up to {available}, but epoch {requested} was requested")]
    FunctionalTooShort { requested: usize, available: usize },

    #[error("path enumeration needs {atoms} atoms, above the cap of {cap}")]
    EnumerationCap { atoms: u128, cap: usize },

    #[error("invalid finite-state model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "power iteration did not converge within {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("kernel is not primitive: {0}")]
    NotPrimitive(String),

    #[error("at least {required} replicates are required, got {got}")]
    TooFewReplicates { required: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fixture parse error at line {line}: {message}")]
    FixtureParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that signal a breach of the model contract (potential range,
    /// positive densities, stochastic rows).
    pub fn is_model_contract(&self) -> bool {
        matches!(
            self,
            Error::PotentialOutOfRange { .. }
                | Error::NonPositiveDensity { .. }
                | Error::ZeroBackwardNormalizer { .. }
                | Error::DegenerateWeights { .. }
                | Error::InvalidModel(_)
                | Error::NotPrimitive(_)
        )
    }
}
