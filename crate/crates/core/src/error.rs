use thiserror::Error;

/// Errors raised by the localization, bound and optimization routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid location: {0}")]
    InvalidLocation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("element index {index} out of range for a panel of {len} elements")]
    ElementIndex { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("phase vector entry {index} has modulus {modulus}, expected 1")]
    NotUnitModulus { index: usize, modulus: f64 },

    #[error("cannot retract: entry {0} is zero")]
    ZeroEntry(usize),

    #[error("atom {0} has zero energy")]
    DegenerateAtom(usize),

    #[error("location coincides with RIS element {0}")]
    CoincidentElement(usize),

    #[error("Fisher information matrix is singular or ill-conditioned (condition number {0:e})")]
    SingularFim(f64),

    #[error("noise power must be positive, got {0}")]
    NoisePower(f64),

    #[error("direct path has zero received power")]
    ZeroDirectPath,
}

pub type Result<T> = std::result::Result<T, Error>;
