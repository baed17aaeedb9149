use thiserror::Error;

/// Errors raised anywhere in the gait-continuation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("singular dynamics: stacked system rank {rank} < {required}{}", fmt_time(*.time))]
    SingularDynamics {
        rank: usize,
        required: usize,
        time: Option<f64>,
    },

    #[error("singular impact: impact Jacobian rank {rank} < {required}")]
    SingularImpact { rank: usize, required: usize },

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("no tangent: null space of the map Jacobian is empty")]
    NoTangent,

    #[error("corrector failed after {iterations} iterations (residual {residual:e})")]
    StepFailure { iterations: usize, residual: f64 },

    #[error("projected Newton did not converge (residual {residual:e})")]
    NonConvergence { last: Vec<f64>, residual: f64 },

    #[error("degenerate homotopy reference: H(a) = 0")]
    DegenerateReference,

    #[error("line search stalled (p = {p:e})")]
    StalledDescent { last: Vec<f64>, p: f64 },

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl Error {
    /// Attach a failure time to a dynamics error raised inside an integration.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::SingularDynamics { rank, required, .. } => Error::SingularDynamics {
                rank,
                required,
                time: Some(t),
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
