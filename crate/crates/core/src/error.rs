use thiserror::Error;

use crate::orbit::PeriodicOrbit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("ions {i} and {j} are coincident (distance {distance:e})")]
    SingularConfiguration { i: usize, j: usize, distance: f64 },

    #[error("equilibrium search did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    ConvergenceFailure {
        iterations: usize,
        gradient_norm: f64,
    },

    #[error("stationary point is a saddle (Hessian eigenvalue {eigenvalue:e})")]
    SaddlePoint { eigenvalue: f64 },

    #[error("mode {mode} is not decoupled (off-diagonal coupling {coupling:e})")]
    NotDecoupled { mode: usize, coupling: f64 },

    #[error(
        "harmonic-balance matrix is singular (reciprocal condition {rcond:e}); drive is resonant"
    )]
    ResonantDrive { rcond: f64 },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integration exceeded {0} steps")]
    TooManySteps(usize),

    #[error("no periodic crystal: period-map deviation {deviation:e}")]
    NonCrystal { deviation: f64 },

    #[error("harmonic-balance refinement failed (residual {residual:e})")]
    RefinementFailure {
        residual: f64,
        raw: Box<PeriodicOrbit>,
    },

    #[error("continued inversion broke down at level {level} (condition number {condition:e})")]
    ExpansionBreakdown { level: i64, condition: f64 },

    #[error("beta = {beta} is not a root: smallest singular value {sigma_min:e} of Y")]
    StaleRoot { beta: f64, sigma_min: f64 },

    #[error("found {found} exponents (with multiplicity) out of {expected}; oracle exponents {oracle:?}")]
    IncompleteSpectrum {
        found: usize,
        expected: usize,
        oracle: Vec<f64>,
    },

    #[error("normalization matrix of modes at beta = {beta} is not positive definite")]
    DegenerateModePairing { beta: f64 },

    #[error("linearized dynamics are unstable: max |lambda| = {max_modulus}")]
    Unstable { max_modulus: f64, moduli: Vec<f64> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
