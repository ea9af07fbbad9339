use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size {0} is invalid: n must be even and at least 8")]
    InvalidGrid(usize),

    #[error("grid mismatch: expected n={expected}, found n={found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("field length {found} does not match grid ({expected} values)")]
    SizeMismatch { expected: usize, found: usize },

    #[error("grid index ({i}, {j}) out of range for n={n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },

    #[error("blow-up at t={t}: {quantity} = {value:e} exceeds threshold")]
    BlowUp {
        t: f64,
        quantity: &'static str,
        value: f64,
    },

    #[error("free energy increased during relaxation at step {step}: {before} -> {after}")]
    EnergyIncrease { step: usize, before: f64, after: f64 },

    #[error("reference state is not an equilibrium: |H(Q)| = {0:e}")]
    NotEquilibrium(f64),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("fit refused: {0}")]
    FitRefused(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error("csv format error: {0}")]
    Csv(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
