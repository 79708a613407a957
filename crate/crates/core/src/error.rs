use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diffusion matrix is singular{}", fmt_step(.step))]
    SingularDiffusion { step: Option<usize> },

    #[error("drift correction norm {norm:.3e} exceeds cap {cap:.3e} at trajectory {trajectory}, step {step}")]
    DriftUnbounded {
        trajectory: usize,
        step: usize,
        norm: f64,
        cap: f64,
    },

    #[error("Girsanov weight not representable at trajectory {trajectory}, step {step} (log weight {log_weight:.3e})")]
    WeightOverflow {
        trajectory: usize,
        step: usize,
        log_weight: f64,
    },

    #[error("value model has no fit for step {step}")]
    NotFitted { step: usize },

    #[error("Riccati recursion hit a singular matrix at step {step}")]
    SingularRecursion { step: usize },

    #[error("RAE denominator vanishes at step {step}: ground truth is constant on the region")]
    DegenerateDenominator { step: usize },

    #[error("query point is outside the oracle domain at step {step}")]
    OutOfDomain { step: usize },

    #[error("missing column `{0}`")]
    Schema(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("backward pass failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_step(step: &Option<usize>) -> String {
    step.map(|s| format!(" at step {s}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            other => Error::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, looking through step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors that come from numerical breakdown rather than bad
    /// input or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::SingularDiffusion { .. }
                | Error::DriftUnbounded { .. }
                | Error::WeightOverflow { .. }
                | Error::SingularRecursion { .. }
                | Error::DegenerateDenominator { .. }
                | Error::NonFinite(_)
                | Error::OutOfDomain { .. }
        )
    }
}
