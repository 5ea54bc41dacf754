use thiserror::Error;

/// Errors raised across the laboratory.
///
/// Escape events during stochastic runs are *data*, not errors; they are
/// reported through trajectory flags and ensemble statistics instead.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("τ = {tau} lies outside the reference domain [{min}, {max}]")]
    OutsideDomain { tau: f64, min: f64, max: f64 },

    #[error("series recurrence is singular at order {order}")]
    SingularRecurrence { order: usize },

    #[error("step size underflow at τ = {tau} (h = {h:e}); stiffness or blow-up")]
    StepSizeUnderflow { tau: f64, h: f64 },

    #[error("step budget of {max_steps} exhausted at τ = {tau}")]
    MaxStepsExceeded { tau: f64, max_steps: usize },

    #[error("non-finite state at τ = {tau}")]
    NonFinite { tau: f64 },

    #[error("series residual {residual:e} at τ_seed = {tau_seed} exceeds {tolerance:e}")]
    SeedResidual { tau_seed: f64, residual: f64, tolerance: f64 },

    #[error("backward reference integration lost stability at τ = {tau_reached}")]
    BackwardInstability { tau_reached: f64 },

    #[error("no certificate: {0}")]
    NoCertificate(crate::lyapunov::Violation),

    #[error("schedule `{0}` is not a closed-form preset")]
    NonPresetSchedule(String),

    #[error("noise schedule bound {bound} exceeds class bound h = {h}")]
    OutOfClass { bound: f64, h: f64 },

    #[error("only {found} extrema found, need at least {needed}")]
    TooFewExtrema { found: usize, needed: usize },

    #[error("more than half the paths are censored at every μ")]
    TooManyCensored,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
