use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: String, reason: String },

    /// The judge passes nothing while the worker can still err, so the
    /// posterior correctness of accepted outputs is undefined.
    #[error("class {class}: judge rejects every output (p_pass = 0 with alpha > 0)")]
    DegenerateJudge { class: usize },

    /// A class without abandonment whose arrivals exceed what the optimal
    /// operating point can serve has no steady-state work queue.
    #[error("class {class}: arrivals exceed service with theta = 0 (work queue grows without bound)")]
    OverloadWithoutAbandonment { class: usize },

    /// A closed-form analysis was requested outside the assumptions it is proven under.
    #[error("precondition failed: {assumption}")]
    Precondition { assumption: String },

    #[error("{0}")]
    Usage(String),

    #[error("LP dimension mismatch: {0}")]
    Dimension(String),

    #[error("LP is {0}")]
    Solver(&'static str),

    #[error("simulation deadlock at t = {time}: no enabled events but {population} tasks remain")]
    Deadlock { time: f64, population: u64 },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Domain {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn precondition(assumption: impl Into<String>) -> Self {
        Error::Precondition {
            assumption: assumption.into(),
        }
    }

    /// True for errors caused by how a command was invoked rather than by the model.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}
