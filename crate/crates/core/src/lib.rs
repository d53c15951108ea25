//! Wideband hybrid-array channel estimation: clustered mmWave channel
//! simulation with beam squint, compressed pilot measurement through
//! phase-shifter beams, the sparse Bayesian learning (SBL) estimator family,
//! and a deep-unfolded SBL network trained with a built-in reverse-mode
//! autodiff engine.
//!
//! The crate is organized along the signal path:
//!
//! - [`channel`] — clustered wideband channels, angular-domain conversion,
//!   temporal evolution.
//! - [`measurement`] — constant-modulus beams, the Kronecker measurement
//!   matrix, structured effective noise, pilot simulation.
//! - [`sbl`] — SBL, M-SBL, PC-SBL, M-PC-SBL, the LS baseline, and NMSE.
//! - [`autodiff`] — a small tape-based reverse-mode engine over dense real
//!   tensors, plus Adam and a finite-difference gradient checker.
//! - [`sblnet`] — the unfolded estimator: SBL layers with convolutional
//!   variance updates, trainable beam phases, the multi-block extension,
//!   and the staged training loop.
//! - [`container`] — the binary tensor container used for datasets and
//!   checkpoints.

pub mod autodiff;
pub mod channel;
pub mod cmat;
pub mod container;
pub mod measurement;
pub mod sbl;
pub mod sblnet;
pub mod seeds;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("matrix is not positive definite (pivot {pivot}: {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is singular (pivot {pivot})")]
    SingularMatrix { pivot: usize },
    #[error("degenerate inner system: zero prior variance and zero noise")]
    DegenerateSystem,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero-norm reference channel in NMSE")]
    ZeroNormReference,
    #[error("container format: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

// Book chapters double as doc-tests so the guide's code stays compilable.
#[cfg(doctest)]
mod book {
    macro_rules! chapter {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    chapter!(channel_model, "../../../book/src/channel-model.md");
    chapter!(measurement, "../../../book/src/measurement.md");
    chapter!(sparse_bayesian_learning, "../../../book/src/sparse-bayesian-learning.md");
    chapter!(autodiff, "../../../book/src/autodiff.md");
    chapter!(unfolded_network, "../../../book/src/unfolded-network.md");
    chapter!(benchmarks, "../../../book/src/benchmarks.md");
}
