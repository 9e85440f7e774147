use thiserror::Error;

/// Errors surfaced by the simulation pipeline.
#[derive(Error, Debug)]
pub enum PfError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("Matsubara frequency x_{k} = {x_k} collides with the Lorentzian width {width} (|x_k - W| < {guard})")]
    PoleCollision {
        k: usize,
        x_k: f64,
        width: f64,
        guard: f64,
    },

    #[error("regulator |Delta| = {abs_delta} below the allowed minimum {min}")]
    RegulatorTooSmall { abs_delta: f64, min: f64 },

    #[error("quadrature did not reach the requested tolerance: achieved {achieved:e}, requested {requested:e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("degenerate fit grid: {0}")]
    DegenerateGrid(String),

    #[error("mode index {index} out of range for {n_modes} modes")]
    IndexOutOfRange { index: usize, n_modes: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("integrator step size underflow at t = {t} (dt = {dt:e}); the generator is too stiff for the explicit path")]
    StepSizeUnderflow { t: f64, dt: f64 },

    #[error("steady-state generator has a (near-)degenerate null space: {0}")]
    DegenerateNullSpace(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("operator parity violation: {0}")]
    ParityViolation(String),

    #[error("correlation not decayed at t_max: |C(t_max)|/|C(0)| = {ratio:e} exceeds {threshold:e}")]
    InsufficientTmax { ratio: f64, threshold: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PfError>;
