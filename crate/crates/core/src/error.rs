use thiserror::Error;

/// Errors surfaced by the numerical layers.
///
/// Validation failures (geometry, CFL, support) are reported eagerly at
/// construction time; iterative failures (CG, power iteration, schedules)
/// carry the partial state needed for diagnostics.
#[derive(Debug, Error)]
pub enum BcError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("CFL violation: dt = {dt:.6e} exceeds h/sqrt(n) = {limit:.6e}")]
    CflViolation { dt: f64, limit: f64 },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("region too thin for H1 norm: {0}")]
    RegionTooThin(String),

    #[error("time window off the grid: {0}")]
    WindowOffGrid(String),

    #[error("translation overflows the time interval: shift {shift_steps} steps, support [{support_lo}, {support_hi}] of {nt} steps")]
    ShiftOverflow {
        shift_steps: i64,
        support_lo: usize,
        support_hi: usize,
        nt: usize,
    },

    #[error("source support violation: {0}")]
    SupportViolation(String),

    #[error("power iteration did not converge after {iters} iterations (last estimate {last:.6e}, rel change {rel_change:.3e})")]
    PowerIterationStall { iters: usize, last: f64, rel_change: f64 },

    #[error("dense basis too large: {size} > cap {cap}")]
    BasisCapExceeded { size: usize, cap: usize },

    #[error("dense factorization failed: {0}")]
    DenseFactorization(String),

    #[error("probe geometry violation: {0}")]
    ProbeGeometry(String),

    #[error("no sigma in the schedule reaches the probe lower bound (best |u| = {best:.4} at sigma = {at_sigma})")]
    ProbeBoundUnreached { best: f64, at_sigma: f64 },

    #[error("reconstruction aborted: {rejected} of {total} target nodes rejected by the divisor guard (allowed fraction {allowed:.2})")]
    TooManyRejectedNodes { rejected: usize, total: usize, allowed: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BcError>;
