use thiserror::Error;

/// Errors raised by model construction and the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    /// The hopping set is not closed under `j -> -j` with adjoint blocks.
    #[error("hermiticity closure violated at displacement ({}, {}): defect {defect:.3e}", .displacement[0], .displacement[1])]
    NotClosed { displacement: [i32; 2], defect: f64 },

    #[error("block at displacement ({}, {}) has shape {rows}x{cols}, fiber dimension is {expected}", .displacement[0], .displacement[1])]
    BlockShape {
        displacement: [i32; 2],
        rows: usize,
        cols: usize,
        expected: usize,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("fiber mismatch: {0}")]
    FiberMismatch(String),

    #[error("torus {l1}x{l2} too small for hopping range {range} under periodic boundary conditions (need L > 2R)")]
    TorusTooSmall { l1: usize, l2: usize, range: usize },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("spectral gap closed: {0}")]
    GapClosed(String),

    #[error("winding accumulation aliased: {0}")]
    Aliasing(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decomposition failed: {0}")]
    Decomposition(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
