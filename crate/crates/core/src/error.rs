//! Crate-wide error type. Variant names mirror the machine-readable error
//! kinds emitted by the CLI (`kind()`).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dimension {0}: only 1 and 2 are handled")]
    UnsupportedDimension(usize),
    #[error("grid too coarse: need at least 3 interior nodes per axis, got {0}")]
    GridTooCoarse(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid exponent: {0}")]
    InvalidExponent(String),
    #[error("cone violation: {0}")]
    ConeViolation(String),
    #[error("cone exit: no admissible step length at iteration {iteration}")]
    ConeExit { iteration: usize },
    #[error("maximum iterations exceeded: residual {residual:.3e} after {iterations} iterations")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("eigen solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    EigenNonConvergence { iterations: usize, residual: f64 },
    #[error("degenerate quotient denominator: |den| = {denominator:.3e} < {threshold:.3e}")]
    DenominatorDegenerate { denominator: f64, threshold: f64 },
    #[error("probe inconclusive: {0}")]
    ProbeInconclusive(String),
    #[error("fixed-point stall: residual plateau at {residual:.3e} after {iterations} iterations")]
    Stall {
        iterations: usize,
        residual: f64,
        /// Last iterate, flattened, for post-mortem inspection.
        last_iterate: Vec<f64>,
    },
    #[error("no fold found on the branch")]
    NoFoldFound,
    #[error("fold detection criteria disagree: eigenvalue-sign brackets at {eig:?}, slope-sign brackets at {slope:?}")]
    CriteriaDisagree { eig: Vec<usize>, slope: Vec<usize> },
    #[error("augmented system singular: {0}")]
    AugmentedSingularity(String),
    #[error("insufficient points: {found} stable points near the fold, need {needed}")]
    InsufficientPoints { found: usize, needed: usize },
    #[error("corrector failure: {0}")]
    CorrectorFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("verification failure: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable kebab-case tag for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::UnsupportedDimension(_) => "unsupported-dimension",
            Error::GridTooCoarse(_) => "grid-too-coarse",
            Error::Shape(_) => "shape-error",
            Error::InvalidProblem(_) => "invalid-problem",
            Error::InvalidExponent(_) => "invalid-exponent",
            Error::ConeViolation(_) => "cone-violation",
            Error::ConeExit { .. } => "cone-exit",
            Error::MaxIterations { .. } => "max-iterations-exceeded",
            Error::SingularJacobian(_) => "singular-jacobian",
            Error::EigenNonConvergence { .. } => "eigen-nonconvergence",
            Error::DenominatorDegenerate { .. } => "denominator-degenerate",
            Error::ProbeInconclusive(_) => "probe-inconclusive",
            Error::Stall { .. } => "stall",
            Error::NoFoldFound => "no-fold-found",
            Error::CriteriaDisagree { .. } => "criteria-disagree",
            Error::AugmentedSingularity(_) => "augmented-singularity",
            Error::InsufficientPoints { .. } => "insufficient-points",
            Error::CorrectorFailure(_) => "corrector-failure",
            Error::Config(_) => "config-error",
            Error::Verification(_) => "verification-failure",
            Error::Io(_) => "io-error",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
