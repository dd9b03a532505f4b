use thiserror::Error;

use crate::measure::GridMeasure;
use crate::ot::{SinkhornSolution, SolverDiagnostics};

/// Errors produced by the grid-measure, transport and barycenter routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid has zero total mass")]
    AllZero,

    #[error("negative mass {value} at cell {index}")]
    NegativeMass { index: usize, value: f64 },

    #[error("non-finite value at cell {index}")]
    NonFinite { index: usize },

    #[error("invalid grid dimensions {height}x{width} (need at least 2x2)")]
    InvalidDimensions { height: usize, width: usize },

    #[error("mass length {got} does not match {height}x{width}")]
    DimensionMismatch {
        height: usize,
        width: usize,
        got: usize,
    },

    #[error("total mass {total} is not normalized")]
    MassNotNormalized { total: f64 },

    #[error("bad magic bytes: expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: expected {expected} bytes of payload, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("malformed PGM header: {0}")]
    BadPgm(String),

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid barycentric weights: {0}")]
    InvalidWeights(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sinkhorn did not converge: violation {:.3e} after {} iterations", .diagnostics.final_violation, .diagnostics.iterations)]
    NoConvergence {
        diagnostics: SolverDiagnostics,
        best: Option<Box<SinkhornSolution>>,
    },

    #[error("barycenter iterations did not converge: change {:.3e} after {} iterations", .diagnostics.final_violation, .diagnostics.iterations)]
    BarycenterNoConvergence {
        diagnostics: SolverDiagnostics,
        best: Box<GridMeasure>,
    },

    #[error("dense transport plan with {entries} entries exceeds the limit of {limit}")]
    PlanTooLarge { entries: usize, limit: usize },

    #[error("dual potentials are stale: marginal violation {violation:.3e}")]
    StaleDuals { violation: f64 },

    #[error("problem too large for the exact solver: {0}")]
    TooLarge(String),

    #[error("infeasible transport problem: {0}")]
    Infeasible(String),

    #[error("could not build a non-degenerate shape after {retries} retries")]
    DegenerateShape { retries: usize },

    #[error("image error: {0}")]
    Image(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
