use thiserror::Error;

/// Errors surfaced by contract violations across the toolkit.
///
/// Soft outcomes (non-convergence, Palais–Smale period collapse, monotonicity
/// violations) are reported as flags on result types, not as errors.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("metric is not positive definite at ({0:.6}, {1:.6})")]
    MetricNotPositiveDefinite(f64, f64),

    #[error("trajectory left the plane chart bounding box at t = {t:.6}")]
    LeftChart { t: f64 },

    #[error("orbit does not close up over one period: position error {pos_err:.3e} (tol {pos_tol:.1e}), velocity error {vel_err:.3e} (tol {vel_tol:.1e})")]
    NotPeriodic {
        pos_err: f64,
        vel_err: f64,
        pos_tol: f64,
        vel_tol: f64,
    },

    #[error("orbit is constant: initial speed {speed:.3e} below tolerance")]
    ConstantOrbit { speed: f64 },

    #[error("loop is not a critical point: gradient norm {grad_norm:.3e} exceeds {tol:.1e}")]
    NotCritical { grad_norm: f64, tol: f64 },

    #[error("time translation {tau} is not node-aligned for N = {n}")]
    NotNodeAligned { tau: f64, n: usize },

    #[error("matrix is not symplectic: residual {residual:.3e}")]
    NotSymplectic { residual: f64 },

    #[error("matrix is not unipotent: {0}")]
    NotUnipotent(String),

    #[error("spectrum is numerically indeterminate: {0}")]
    IndeterminateSpectrum(String),

    #[error("numerical degeneracy: {0}")]
    Degeneracy(String),

    #[error("inconsistent bisection bracket: {0}")]
    Bracket(String),

    #[error("relaxation path tore: consecutive loop distance {gap:.3e} exceeds {tol:.3e} after refinement")]
    PathTear { gap: f64, tol: f64 },

    #[error("index computation inconsistent: {0}")]
    IndexInconsistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
