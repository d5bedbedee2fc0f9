use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report. Each variant maps to a stable
/// machine-readable code via [`Error::code`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unit {unit} has no observation for period {period}")]
    UnbalancedPanel { unit: String, period: String },
    #[error("row {row}, column {column}: cannot parse {value:?} as a finite number")]
    ParseError {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate observation for unit {unit} at period {period}")]
    DuplicateObservation { unit: String, period: String },
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("invalid panel: {0}")]
    InvalidPanel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),

    #[error("no stayers at transition t={t}")]
    NoStayers { t: usize },
    #[error("no quasi-stayers with |dD| <= {delta}")]
    NoQuasiStayers { delta: f64 },
    #[error("too few observations: need {needed}, have {have}")]
    TooFewObservations { needed: usize, have: usize },
    #[error("degenerate bandwidth: baseline treatment has zero spread")]
    DegenerateBandwidth,
    #[error("effective sample size {ess:.3} at x={x} is below the minimum {min}")]
    InsufficientSupport { x: f64, ess: f64, min: f64 },

    #[error(
        "separation detected: max |coefficient| {max_coef:.2} exceeds 30 on the standardized basis"
    )]
    SeparationDetected { max_coef: f64 },
    #[error("predicted control probability {prob:e} below 1e-6 at d={d}")]
    ZeroControlProbability { d: f64, prob: f64 },

    #[error("no movers")]
    NoMovers,
    #[error("every mover was trimmed")]
    AllMoversTrimmed,
    #[error("no mover has a supported control comparison")]
    NoSupportedMovers,
    #[error("no increasers")]
    NoIncreasers,
    #[error("no decreasers")]
    NoDecreasers,
    #[error("no eligible movers for long-run horizon l={ell}")]
    NoEligibleMovers { ell: usize },
    #[error("no eligible controls at t={t} for long-run horizon l={ell}")]
    NoEligibleControls { t: usize, ell: usize },
    #[error("no units without a treatment change by t={t}")]
    NoNeverMovers { t: usize },
    #[error("denominator of the cost-benefit ratio is zero")]
    ZeroDenominator,
    #[error("treatment has no within-unit, within-period variation")]
    CollinearTreatment,

    #[error("{failed} of {reps} bootstrap replicates failed")]
    TooManyFailures { failed: usize, reps: usize },

    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("oracle does not support target {0}")]
    UnsupportedTarget(String),
}

impl Error {
    /// Stable identifier used in JSON error payloads.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnbalancedPanel { .. } => "UnbalancedPanel",
            Error::ParseError { .. } => "ParseError",
            Error::DuplicateObservation { .. } => "DuplicateObservation",
            Error::MissingColumn(_) => "MissingColumn",
            Error::InvalidPanel(_) => "InvalidPanel",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "Io",
            Error::NoStayers { .. } => "NoStayers",
            Error::NoQuasiStayers { .. } => "NoQuasiStayers",
            Error::TooFewObservations { .. } => "TooFewObservations",
            Error::DegenerateBandwidth => "DegenerateBandwidth",
            Error::InsufficientSupport { .. } => "InsufficientSupport",
            Error::SeparationDetected { .. } => "SeparationDetected",
            Error::ZeroControlProbability { .. } => "ZeroControlProbability",
            Error::NoMovers => "NoMovers",
            Error::AllMoversTrimmed => "AllMoversTrimmed",
            Error::NoSupportedMovers => "NoSupportedMovers",
            Error::NoIncreasers => "NoIncreasers",
            Error::NoDecreasers => "NoDecreasers",
            Error::NoEligibleMovers { .. } => "NoEligibleMovers",
            Error::NoEligibleControls { .. } => "NoEligibleControls",
            Error::NoNeverMovers { .. } => "NoNeverMovers",
            Error::ZeroDenominator => "ZeroDenominator",
            Error::CollinearTreatment => "CollinearTreatment",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::InvalidSpec(_) => "InvalidSpec",
            Error::UnsupportedTarget(_) => "UnsupportedTarget",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
