use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point is within {tol:e} of the boundary of region {region} and cannot be assigned to one side")]
    AmbiguousPoint { region: usize, tol: f64 },

    #[error("point lies outside every declared region")]
    OutsideDomain,

    #[error("step size collapsed at t = {t}: {reason}")]
    StepCollapse { t: f64, reason: String },

    #[error("trajectory escaped the declared domain at t = {t}: {reason}")]
    EscapedDomain { t: f64, reason: String },

    #[error("crossing of surface {surface} is not transversal: n.F = {value:e} (margin {margin:e})")]
    NotTransversal { surface: usize, value: f64, margin: f64 },

    #[error("no return to the section within t = {horizon}")]
    NoReturn { horizon: f64 },

    #[error("Newton iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("fixed point is unstable: spectral radius of the section map Jacobian is {radius}")]
    UnstableFixedPoint { radius: f64 },

    #[error("invalid Glass targets: {0}")]
    InvalidTargets(String),

    #[error("jump matrix is singular: cond = {cond:e}")]
    SingularCrossing { cond: f64 },

    #[error("grazing crossing: |n.F-| = {value:e}")]
    GrazingCrossing { value: f64 },

    #[error("no eigenvalue of B within {tol:e} of 1 (closest: {closest})")]
    NoUnitEigenvalue { closest: f64, tol: f64 },

    #[error("normalization F.z is degenerate ({value:e})")]
    DegenerateNormalization { value: f64 },

    #[error("perturbed trajectory left the basin: distance {distance:e} to the cycle")]
    LeftBasin { distance: f64 },

    #[error("geometric phase is undefined at the reference center")]
    DegeneratePoint,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown model: {0}")]
    UnknownModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Variant name, used as a stable identifier in reports.
    pub fn name(&self) -> &'static str {
        match self {
            Error::AmbiguousPoint { .. } => "AmbiguousPoint",
            Error::OutsideDomain => "OutsideDomain",
            Error::StepCollapse { .. } => "StepCollapse",
            Error::EscapedDomain { .. } => "EscapedDomain",
            Error::NotTransversal { .. } => "NotTransversal",
            Error::NoReturn { .. } => "NoReturn",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::UnstableFixedPoint { .. } => "UnstableFixedPoint",
            Error::InvalidTargets(_) => "InvalidTargets",
            Error::SingularCrossing { .. } => "SingularCrossing",
            Error::GrazingCrossing { .. } => "GrazingCrossing",
            Error::NoUnitEigenvalue { .. } => "NoUnitEigenvalue",
            Error::DegenerateNormalization { .. } => "DegenerateNormalization",
            Error::LeftBasin { .. } => "LeftBasin",
            Error::DegeneratePoint => "DegeneratePoint",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidSystem(_) => "InvalidSystem",
            Error::InvalidInput(_) => "InvalidInput",
            Error::UnknownModel(_) => "UnknownModel",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
