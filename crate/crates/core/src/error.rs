use crate::grid::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    Dimension { left: Shape, right: Shape },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("PGM parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("unsupported shape {shape}: {reason}")]
    UnsupportedShape { shape: Shape, reason: String },

    #[error("dense assembly refused: {dim} unknowns exceeds the cap of {cap}")]
    DenseCap { dim: usize, cap: usize },

    #[error("unsupported configuration: {0}")]
    UnsupportedConfiguration(String),

    #[error("wrong solver: {0}")]
    WrongSolver(String),

    #[error("operator is not positive definite (Rayleigh quotient {rayleigh:e})")]
    Definiteness { rayleigh: f64 },

    #[error(
        "line search stagnated at iteration {iteration}: |grad J| = {gradient_norm:e}, \
         J = {objective:e}, last trial step {step:e}"
    )]
    Stagnation {
        iteration: usize,
        gradient_norm: f64,
        objective: f64,
        step: f64,
    },

    #[error("no L-curve corner: {0}")]
    NoCorner(String),

    #[error("sweep failed: {0}")]
    Sweep(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dims(left: Shape, right: Shape) -> Self {
        Error::Dimension { left, right }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn at_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures of the numerics (as opposed to bad input or
    /// configuration). The CLI maps these to exit code 3.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::NonFinite { .. }
                | Error::Definiteness { .. }
                | Error::Stagnation { .. }
                | Error::NoCorner(_)
                | Error::Sweep(_)
        )
    }
}
