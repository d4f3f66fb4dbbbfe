use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    /// A specification value is outside its documented range.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    /// A shape does not divide evenly across the requested parallelism.
    #[error("{dimension} ({value}) is not divisible by {divisor}")]
    Indivisible {
        dimension: String,
        value: u64,
        divisor: u64,
    },

    #[error("arithmetic overflow while counting {0}")]
    Overflow(&'static str),

    #[error("unknown compute dtype {0}")]
    UnknownDtype(String),

    #[error("both FLOPs and bytes are zero; nothing to time")]
    EmptyWork,

    #[error("batch {requested} exceeds the memory-feasible maximum {max_batch}")]
    BatchOverflow { requested: u64, max_batch: u64 },

    #[error("memory footprint exceeds local capacity by {excess} bytes and no overflow tier is configured")]
    NoOverflowTier { excess: f64 },

    #[error("no memory tier with role {0}")]
    MissingTier(&'static str),

    #[error("tensor parallelism {0} needs a network but the system has none")]
    MissingNetwork(u32),

    #[error("scenario weights for {class} sum to {sum}, expected 1")]
    BadMix { class: String, sum: f64 },

    #[error("no feasible plan: {0}")]
    NoFeasiblePlan(String),

    #[error("{0}")]
    Metric(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("I/O: {0}")]
    Io(String),
}

impl SimError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        SimError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
