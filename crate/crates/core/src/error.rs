use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("subsystem index {index} out of range for {count} subsystems")]
    SubsystemOutOfRange { index: usize, count: usize },

    #[error(
        "Fock cutoff {cutoff} too small for coherent amplitude {amplitude}: \
         truncated weight {weight:e}; cutoff {required} required"
    )]
    CutoffTooSmall {
        cutoff: usize,
        required: usize,
        amplitude: f64,
        weight: f64,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("integrator accuracy: {0}; reduce dt")]
    IntegratorAccuracy(String),

    #[error("no photon available to detect (total jump rate {0:e})")]
    NoPhotonAvailable(f64),

    #[error("detection record has zero probability for this initial state")]
    ImpossibleRecord,

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("state is not normalizable")]
    ZeroNorm,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
