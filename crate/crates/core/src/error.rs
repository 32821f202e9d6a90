use thiserror::Error;

/// Errors raised anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid equation: {0}")]
    InvalidEquation(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("order {0} of the cascade has not been solved yet")]
    MissingOrder(usize),

    #[error("non-finite value in layer {layer} of the trunk")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient in {path}")]
    NonFiniteGradient { path: String },

    #[error("normal matrix is singular (condition estimate {condition:.3e})")]
    SingularMatrix { condition: f64 },

    #[error("non-finite head weights at cascade order {order}")]
    NonFiniteSolution { order: usize },

    #[error("training diverged at iteration {iteration} (loss {loss:e})")]
    Diverged { iteration: usize, loss: f64 },

    #[error("integrator exceeded {max_steps} steps before t = {t}")]
    StepLimit { max_steps: usize, t: f64 },

    #[error("integrator step size underflow at t = {t}")]
    StepUnderflow { t: f64 },

    #[error("solution blew up at t = {t} (|u| = {norm:e})")]
    BlowUp { t: f64, norm: f64 },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("malformed csv: {0}")]
    MalformedCsv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// True for failures of the numerics rather than of inputs or IO.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteActivation { .. }
                | Error::NonFiniteGradient { .. }
                | Error::SingularMatrix { .. }
                | Error::NonFiniteSolution { .. }
                | Error::Diverged { .. }
                | Error::StepLimit { .. }
                | Error::StepUnderflow { .. }
                | Error::BlowUp { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
