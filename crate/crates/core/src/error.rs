use thiserror::Error;

/// Errors produced anywhere in the learning stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("{n} qubits exceeds the dense limit of {limit}")]
    DenseLimit { n: usize, limit: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown vertex {0}")]
    UnknownVertex(usize),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("too few nodes: need at least {need}, got {got}")]
    Underdetermined { need: usize, got: usize },

    #[error("numerically singular system (condition estimate {0:e})")]
    Singular(f64),

    #[error("no degree up to {cap} reaches the requested accuracy")]
    DegreeUnreachable { cap: usize },

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("region {region:?} does not contain the observable support {support:?}")]
    RegionSupport { region: Vec<usize>, support: Vec<usize> },

    #[error("region of size {size} exceeds the cap {cap}")]
    RegionCap { size: usize, cap: usize },

    #[error("no snapshots recorded at time index {0}")]
    EmptyBatch(usize),

    #[error("insufficient snapshots: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("rev did not converge: objective {objective:.3e}, gap estimate {gap:.3e}")]
    NotConverged {
        objective: f64,
        gap: f64,
        best: Vec<f64>,
    },

    #[error("missing overlap estimate for {0}")]
    MissingEstimate(String),

    #[error("planning infeasible: {0}")]
    Infeasible(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
