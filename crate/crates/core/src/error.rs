use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("label {label} has dimension {left} on one side and {right} on the other")]
    DimMismatch { label: u32, left: usize, right: usize },

    #[error("tensor expects {expected} entries, got {actual}")]
    EntryCount { expected: usize, actual: usize },

    #[error("label {0} appears twice in one tensor")]
    DuplicateLabel(u32),

    #[error("index dimension must be at least 1 (label {0})")]
    ZeroDim(u32),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("path step {step} references slot {slot} but only {operands} operands remain")]
    InvalidStep { step: usize, slot: usize, operands: usize },

    #[error("path leaves {remaining} operands uncontracted")]
    IncompletePath { remaining: usize },

    #[error("intermediate of {entries} entries exceeds the limit of {limit}")]
    ResourceLimit { entries: u128, limit: usize },

    #[error("wall-clock budget exhausted")]
    Timeout,

    #[error("{what}: requested {requested}, supported at most {max}")]
    Capacity {
        what: &'static str,
        requested: usize,
        max: usize,
    },

    #[error("cached path does not replay on a network with the same signature")]
    CacheCorruption,

    #[error("noise site {site} realizes a {actual}-qubit operator on a {expected}-qubit gate")]
    Arity {
        site: usize,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    Usage(String),

    #[error("conditional marginal at stage {stage} has vanishing mass {mass:e}")]
    ImpossiblePrefix { stage: usize, mass: f64 },

    #[error("marginal diagonal entry {value:e} is negative beyond rounding")]
    Numerical { value: f64 },

    #[error("measurement error: {0}")]
    Measurement(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("error set {id}: {source}")]
    InErrorSet {
        id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that the sweep harness records as a failed instance
    /// instead of aborting.
    pub fn is_resource_guard(&self) -> bool {
        match self {
            Error::ResourceLimit { .. } | Error::Timeout => true,
            Error::InErrorSet { source, .. } => source.is_resource_guard(),
            _ => false,
        }
    }
}
