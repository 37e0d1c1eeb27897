use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate (lat {lat}, lon {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("point (lat {lat}, lon {lon}) is too far from the projection origin")]
    OutOfProjectionRange { lat: f64, lon: f64 },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("power deterrence is singular at zero distance")]
    SingularDistance,
    #[error("degenerate factor `{0}`: all values are zero")]
    DegenerateFactor(String),
    #[error("origin total {origins} does not match destination total {destinations}")]
    MarginalMismatch { origins: f64, destinations: f64 },
    #[error("balancing did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("origin `{0}` cannot reach any destination")]
    UnreachableOrigin(String),
    #[error("destination `{0}` cannot be reached from any origin")]
    UnreachableDestination(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("zero variance in {0}")]
    DegenerateVariance(&'static str),
    #[error("no grid point produced a defined fit")]
    NoDefinedFit,
    #[error("point lies inside more than one zone: {0} and {1}")]
    AmbiguousZone(String, String),
    #[error("model produces no flow")]
    DegenerateModel,
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
