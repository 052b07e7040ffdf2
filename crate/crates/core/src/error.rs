use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid optical configuration: {0}")]
    InvalidOptics(String),
    #[error("quadrature not converged at r = {r} nm, z = {z} nm (relative change {change:e})")]
    QuadratureNotConverged { r: f64, z: f64, change: f64 },
    #[error("vector is not unit norm (|v| = {0})")]
    NonUnitVector(f64),
    #[error("invalid scan grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("objective returned a non-finite value")]
    ObjectiveNotFinite,
    #[error("template is constant over the field of view")]
    DegenerateTemplate,
    #[error("image has zero variance")]
    DegenerateImage,
    #[error("no start converged ({0} tried)")]
    NoConvergence(usize),
    #[error("transition frequencies are inconsistent with any real field: {0}")]
    InconsistentFrequencies(String),
    #[error("field magnitude is zero; cone angle undefined")]
    DegenerateField,
    #[error("spectrum fit failed: {0}")]
    FitFailed(String),
    #[error("hyperfine triplets overlap (group centers {center1:.3} and {center2:.3} MHz, linewidth {linewidth:.3} MHz)")]
    TripletsOverlap {
        center1: f64,
        center2: f64,
        linewidth: f64,
    },
    #[error("NV axes are degenerate (Gram condition number {0:e})")]
    DegenerateAxes(f64),
    #[error("no direction satisfies the cones (best residual {0:e})")]
    NoSolution(f64),
    #[error("cones {0} and {1} do not intersect")]
    NoIntersection(usize, usize),
    #[error("need at least {needed} constraints, got {got}")]
    TooFewConstraints { needed: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidOptics(_)
            | Error::NonUnitVector(_)
            | Error::InvalidGrid(_)
            | Error::InvalidParameter(_)
            | Error::TooFewConstraints { .. } => ErrorKind::Validation,
            Error::Parse(_) | Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Numerical,
        }
    }
}
