//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by data handling, penalty optimization, the theory
/// engine, the grid solver and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty domain")]
    EmptyDomain,

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label grouping requires class indices")]
    LabelGrouping,

    #[error("grouping does not cover all samples")]
    IncompleteGrouping,

    #[error("degenerate density: indicator set but r_hat = 0 for domain {domain}, group {group}")]
    DegenerateDensity { domain: u32, group: usize },

    #[error("domain {0} has no groups")]
    DomainWithoutGroups(u32),

    #[error("exact form requires positive bracket (domain {domain}, bracket {bracket})")]
    NonPositiveBracket { domain: u32, bracket: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("grid too small: need at least 3 nodes, got {0}")]
    GridTooSmall(usize),

    #[error("degenerate A_e: integral of (r_hat^3/r^2) f*^2 vanished for domain {0}")]
    DegenerateAe(u32),

    #[error("{quantity} must be positive at every node (violated at node {node})")]
    NonPositiveField { quantity: &'static str, node: usize },

    #[error("homogeneous solution overflow: log magnitude {log} exceeds bound {bound}")]
    WkbOverflow { log: f64, bound: f64 },

    #[error("singular tridiagonal system at row {0}")]
    SingularSystem(usize),

    #[error("sample feature {value} outside [0,1]")]
    FeatureOutOfRange { value: f64 },

    #[error("solver did not converge after {iters} outer iterations (last loss {last_loss})")]
    SolverNonConvergence {
        iters: usize,
        last_loss: f64,
        trace: Vec<f64>,
        last_iterate: Vec<f64>,
    },

    #[error("non-finite loss in term `{term}`")]
    NonFiniteLoss { term: &'static str },

    #[error("auc requires both classes present")]
    SingleClassAuc,

    #[error("t-test requires at least two samples per group")]
    TooFewSamples,

    #[error("corruption emptied domain {0}")]
    CorruptionEmptiedDomain(u32),

    #[error("replication {replication} failed: {source}")]
    Replication {
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing file {path}: {source}")]
    MissingFile {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Wrap an error with the RPO phase in which it occurred.
    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase {
            phase,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
