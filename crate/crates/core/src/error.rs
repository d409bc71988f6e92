use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resource limit: {0}")]
    Resource(String),

    #[error("steady state is degenerate (kernel dimension {dim})")]
    Degenerate { dim: usize },

    #[error("{what} did not converge (residual {residual:e})")]
    Convergence { what: String, residual: f64 },

    #[error("limit cycle suspected: residual oscillates around {residual:e}")]
    LimitCycle { residual: f64 },

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("operation mode {found} not allowed here ({context})")]
    Mode { found: String, context: String },

    #[error("two-time generator is unstable (max Re eig = {max_re:e}), integral diverges")]
    DivergentIntegral { max_re: f64 },

    #[error("steady state has nonzero transverse means ({0:e})")]
    InconsistentSteadyState(f64),

    #[error("tomography gives a non-positive state (min eigenvalue {0:e})")]
    Tomography(f64),

    #[error("search range exhausted: {0}")]
    Range(String),

    #[error("degenerate baseline: {0}")]
    DegenerateBaseline(String),

    #[error("mixed operation modes across the scan: {0}")]
    ModeMixing(String),

    #[error("symmetry violated: {0}")]
    Symmetry(String),

    #[error("{0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Short machine-readable tag, used in error tables.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::Resource(_) => "resource",
            Error::Degenerate { .. } => "degenerate",
            Error::Convergence { .. } => "convergence",
            Error::LimitCycle { .. } => "limit_cycle",
            Error::Numerical(_) => "numerical",
            Error::Mode { .. } => "mode",
            Error::DivergentIntegral { .. } => "divergent_integral",
            Error::InconsistentSteadyState(_) => "inconsistent_steady_state",
            Error::Tomography(_) => "tomography",
            Error::Range(_) => "range",
            Error::DegenerateBaseline(_) => "degenerate_baseline",
            Error::ModeMixing(_) => "mode_mixing",
            Error::Symmetry(_) => "symmetry",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
