use std::path::PathBuf;

use thiserror::Error;

/// Every failure mode of the library. Variants map one-to-one onto the
/// CLI exit-code taxonomy, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("topology error: {0}")]
    Topology(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("surface has genus {genus}; genus >= 1 is required")]
    GenusZero { genus: usize },

    #[error("connectivity mismatch: {0}")]
    ConnectivityMismatch(String),

    #[error("face {face} is not orientation preserving (det = {det:e})")]
    Orientation { face: usize, det: f64 },

    #[error("degenerate lattice basis (det = {det:e})")]
    DegenerateLattice { det: f64 },

    #[error("torus area {area} is not 1 (normalize first)")]
    NotUnitArea { area: f64 },

    #[error("infeasible point: face {face} has jacobian {jacobian:e}")]
    InfeasiblePoint { face: usize, jacobian: f64 },

    #[error("infeasible start: {0}")]
    InfeasibleStart(String),

    #[error("stage p = {p} made no descent in {iterations} iterations (|grad| = {grad_norm:e})")]
    StageDivergence {
        p: f64,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("rejection sampling exhausted after {attempts} attempts")]
    RejectionExhausted { attempts: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Parse { .. } | Error::Topology(_) | Error::Geometry(_) => 2,
            Error::GenusZero { .. } => 3,
            Error::ConnectivityMismatch(_) => 4,
            Error::Orientation { .. } | Error::InfeasiblePoint { .. } => 5,
            Error::NotUnitArea { .. } => 6,
            Error::StageDivergence { .. } => 7,
            Error::DegenerateLattice { .. }
            | Error::InfeasibleStart(_)
            | Error::RejectionExhausted { .. }
            | Error::Config(_) => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
