use thiserror::Error;

/// Errors produced by the dichotomy machinery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rate inversion diverged: bracket exceeded {limit:e} while seeking warp value {target}")]
    RateDivergence { target: f64, limit: f64 },

    #[error("rate density must be positive: mu({t}) = {value}")]
    NonPositiveDensity { t: f64, value: f64 },

    #[error("integrator step size underflow on [{from}, {to}] (stuck at t = {at}, h = {step:e})")]
    Stiffness { from: f64, to: f64, at: f64, step: f64 },

    #[error("norm family violates the lower bound ||x|| <= ||x||_t at t = {t} (ratio {ratio}) for x = {x:?}")]
    NormLowerBound { t: f64, x: Vec<f64>, ratio: f64 },

    #[error("restriction to the unstable subspace is not invertible on [{t}, {s}] (condition number {condition:e})")]
    Invertibility { t: f64, s: f64, condition: f64 },

    #[error("no dichotomy detected: finite-time exponent {exponent} at tau = {tau} lies inside the gap (-{margin}, {margin})")]
    GapViolation { tau: f64, exponent: f64, margin: f64 },

    #[error("degenerate splitting at tau = {tau}: minimal principal angle {angle:e}")]
    DegenerateSplitting { tau: f64, angle: f64 },

    #[error("no dichotomy detected: {0}")]
    NoDichotomy(String),

    #[error("supremum horizon too short at t = {t}: forward supremand still increasing at the truncation edge")]
    HorizonTooShort { t: f64 },

    #[error("Picard iteration did not converge after {iterations} iterations (last contraction ratio {ratio})")]
    NonConvergence { iterations: usize, ratio: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown fixture `{name}`; available: {available}")]
    UnknownFixture { name: String, available: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
