use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid system: {}", .0.join("; "))]
    InvalidSystem(Vec<String>),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("state left the domain at t = {t}: {detail}")]
    StateEscape { t: f64, detail: String },

    #[error("integrator step size underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },

    #[error("no guard crossing within {max_time} time units")]
    NoCrossing { max_time: f64 },

    #[error("tangential guard crossing: |Dγ·F| = {transversality:e}")]
    Tangency { transversality: f64 },

    #[error("quadrature did not converge within the refinement budget (estimate {estimate:e})")]
    QuadratureFailure { estimate: f64 },

    #[error("ε-Taylor fit residual {residual:e} exceeds tolerance (remainder order {residual_order})")]
    PoorFit { residual: f64, residual_order: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular fixed-point Jacobian (condition {condition:e}, smallest singular value {sigma_min:e})")]
    SingularJacobian { condition: f64, sigma_min: f64 },

    #[error("ε = {eps} outside the validity range [{lo}, {hi})")]
    EpsOutOfRange { eps: f64, lo: f64, hi: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("no liftoff event during stance")]
    NoLiftoff,

    #[error("non-physical state: {0}")]
    NonPhysical(String),

    #[error("invalid sweep request: {0}")]
    InvalidSweep(String),

    #[error("settings: {0}")]
    Settings(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),
}

impl Error {
    /// Errors caused by the caller's input rather than by a numerical failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidSystem(_)
                | Error::InvalidParams(_)
                | Error::EpsOutOfRange { .. }
                | Error::Dimension { .. }
                | Error::InvalidSweep(_)
                | Error::Settings(_)
                | Error::UnknownModel(_)
        )
    }
}
