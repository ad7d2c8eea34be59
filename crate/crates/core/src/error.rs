use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = PulseError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PulseError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field contains a non-finite value at index {0}")]
    NonFinite(usize),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A coefficient does not settle to its far-field value inside the box.
    #[error("box too small: far-field deviation {deviation:.3e} exceeds envelope {envelope:.3e} at |x| = {radius:.3}")]
    BoxTooSmall {
        deviation: f64,
        envelope: f64,
        radius: f64,
    },

    #[error("manufactured target must be positive, found {value:.3e} at index {index}")]
    NonPositiveTarget { index: usize, value: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Jacobian solve stagnated at relative residual {relative_residual:.3e}")]
    SingularJacobian { relative_residual: f64 },

    #[error("iteration converged to the trivial solution (H2 norm {h2_norm:.3e})")]
    TrivialSolution { h2_norm: f64 },

    #[error("spectral tail {tail:.3e} exceeds {tol:.1e}; refine the grid")]
    UnderResolved { tail: f64, tol: f64 },

    #[error("profile does not decay (fitted log-slope {slope:.3e})")]
    NonDecaying { slope: f64 },

    #[error("Krylov solve stagnated after {iterations} iterations (relative residual {relative_residual:.3e})")]
    Stagnation {
        iterations: usize,
        relative_residual: f64,
    },

    #[error("kernel check has not been run on this operator")]
    KernelNotChecked,

    #[error("kernel check failed: |lambda_min| = {lambda_min:.3e} is below the threshold")]
    KernelCheckFailed { lambda_min: f64 },

    #[error("eigensolver did not converge, residuals {residuals:?}")]
    EigenNonConvergence { residuals: Vec<f64> },

    #[error("iterate {iteration} left the ball: H2 norm {norm:.6e} > rho = {rho:.6e}")]
    BallEscape { iteration: usize, norm: f64, rho: f64 },

    #[error("no contraction: step ratios {ratios:?} exceed 1 up to iteration {iteration}")]
    NoContraction { iteration: usize, ratios: Vec<f64> },

    #[error("Picard iteration hit the cap of {iterations} steps (last step {last_step:.3e})")]
    PicardCap { iterations: usize, last_step: f64 },

    #[error("ball radius {rho:.6e} must be below ||w0||_H2 = {w0_h2:.6e}")]
    RadiusTooLarge { rho: f64, w0_h2: f64 },

    #[error("epsilon {eps:.6e} is outside the certified region (eps_star = {eps_star:.6e} at rho = {rho:.6e})")]
    Uncertified { eps: f64, eps_star: f64, rho: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("sweep failed at eps = {eps:.6e}: {source}")]
    SweepPoint {
        eps: f64,
        #[source]
        source: Box<PulseError>,
    },

    #[error("malformed PULS1 data: {0}")]
    Format(String),

    #[error("config error in {path:?}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
