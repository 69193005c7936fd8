//! Error type shared by every module in the crate.

use std::fmt;
use std::io;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the numeric kernels, solvers, pipeline stages, and IO.
#[derive(Debug)]
pub enum Error {
    /// A matrix row had (near-)zero norm where a direction was required.
    ZeroRow { row: usize, norm: f64 },
    /// Two matrices cannot be combined because their shapes disagree.
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// Parameter and gradient shapes disagree.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// A constructor or kernel received a non-finite value.
    NonFinite { context: &'static str },
    /// Softmax temperature must be strictly positive.
    NonPositiveTemperature { tau: f64 },
    /// Marginal masses violate the solver's balance precondition.
    UnbalancedMarginals { mu_mass: f64, nu_mass: f64 },
    /// A scaling denominator or kernel row underflowed to (near) zero.
    NumericalUnderflow { context: &'static str },
    /// The exact oracle only enumerates problems up to a small size.
    TooLarge { size: usize, max: usize },
    /// A class label fell outside `[0, num_classes)`.
    LabelOutOfRange { label: usize, num_classes: usize },
    /// Per-sample inputs do not cover the dataset.
    IndexMismatch { expected: usize, got: usize },
    /// Two per-sample sequences have different lengths.
    LengthMismatch { left: usize, right: usize },
    /// A scalar argument fell outside its mathematical domain.
    DomainError { context: &'static str, value: f64 },
    /// Ground-truth labels are required but absent (or the set is empty).
    MissingTruth,
    /// Prototype rejection sampling exhausted its attempt budget.
    RejectionFailure { attempts: usize },
    /// Wrapper around filesystem failures.
    Io(io::Error),
    /// The feature blob length does not match the manifest geometry.
    BlobLengthMismatch { expected: usize, got: usize },
    /// A loaded artifact violates a structural invariant.
    ValidationError { message: String },
    /// The on-disk format version is not supported by this build.
    UnsupportedVersion { found: u32, supported: u32 },
    /// A structured file could not be parsed.
    ParseError { message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ZeroRow { row, norm } => {
                write!(f, "row {row} has norm {norm:e}, too small to normalize")
            }
            Error::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left:?} vs {right:?}")
            }
            Error::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected {expected:?}, got {got:?}")
            }
            Error::NonFinite { context } => {
                write!(f, "non-finite value encountered in {context}")
            }
            Error::NonPositiveTemperature { tau } => {
                write!(f, "softmax temperature must be positive, got {tau}")
            }
            Error::UnbalancedMarginals { mu_mass, nu_mass } => {
                write!(
                    f,
                    "marginal masses violate the solver precondition: |mu|={mu_mass}, |nu|={nu_mass}"
                )
            }
            Error::NumericalUnderflow { context } => {
                write!(f, "numerical underflow in {context}")
            }
            Error::TooLarge { size, max } => {
                write!(f, "problem size {size} exceeds the oracle limit {max}")
            }
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} outside [0, {num_classes})")
            }
            Error::IndexMismatch { expected, got } => {
                write!(f, "per-sample input covers {got} samples, expected {expected}")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::DomainError { context, value } => {
                write!(f, "{context} received out-of-domain value {value}")
            }
            Error::MissingTruth => {
                write!(f, "ground-truth labels required but not available")
            }
            Error::RejectionFailure { attempts } => {
                write!(
                    f,
                    "prototype rejection sampling failed after {attempts} attempts"
                )
            }
            Error::Io(e) => write!(f, "i/o error: {e}"),
            Error::BlobLengthMismatch { expected, got } => {
                write!(f, "feature blob is {got} bytes, manifest implies {expected}")
            }
            Error::ValidationError { message } => write!(f, "validation error: {message}"),
            Error::UnsupportedVersion { found, supported } => {
                write!(f, "format version {found} unsupported (this build reads {supported})")
            }
            Error::ParseError { message } => write!(f, "parse error: {message}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
