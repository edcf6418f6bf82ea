use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("observation times do not cover the window [{start}, {end}]")]
    WindowNotCovered { start: f64, end: f64 },
    #[error("times must be strictly increasing (index {index})")]
    NonMonotoneTimes { index: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("{x} lies outside the window [{start}, {end}]")]
    OutOfWindow { x: f64, start: f64, end: f64 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("tau mismatch: model has {model}, history has {history}")]
    TauMismatch { model: f64, history: f64 },
    #[error("unresolved parameter `{0}`")]
    UnresolvedParameter(String),
    #[error("expression depth {0} exceeds the limit of {max}", max = crate::models::MAX_DEPTH)]
    ExpressionTooDeep(usize),
    #[error("model reads the squared-diffusion history but none was supplied")]
    MissingSigma2History,
    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
    #[error("diffusion evaluated to negative value {0}")]
    NegativeDiffusion(f64),
    #[error("diffusion is zero at step {step}; transition density is degenerate")]
    DegenerateDiffusion { step: usize },
    #[error("non-finite value produced: {0}")]
    NonFinite(String),
    #[error("blocks are not adjacent: {0}")]
    NonAdjacentBlocks(String),
    #[error("series spans {steps} steps but at least {required} are needed")]
    SeriesTooShort { steps: usize, required: usize },
    #[error("no finite log-likelihood found after {evals} evaluations")]
    NoFiniteEvaluation { evals: usize },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    /// Errors that arise from the numbers themselves rather than from
    /// malformed inputs or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NegativeSqrt(_)
                | Error::NegativeDiffusion(_)
                | Error::DegenerateDiffusion { .. }
                | Error::NonFinite(_)
                | Error::NoFiniteEvaluation { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
