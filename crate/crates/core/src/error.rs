use thiserror::Error;

/// Errors raised across kernels, drivers, evaluators and diagnostics.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel domain error at (t={t}, r={r}): {reason}")]
    Domain { t: f64, r: f64, reason: String },

    #[error("kernel invariant violated at (t={t}, r={r}): {reason}")]
    KernelInvariant { t: f64, r: f64, reason: String },

    #[error("quadrature on [{a}, {b}] did not converge with {nodes} nodes (last difference {last_diff:e})")]
    Quadrature {
        a: f64,
        b: f64,
        nodes: usize,
        last_diff: f64,
    },

    #[error("diagnostic failed at t={t}, delta={delta}: {source}")]
    DiagnosticFailure {
        t: f64,
        delta: f64,
        source: Box<Error>,
    },

    #[error("time {t} outside path horizon [{t_begin}, {t_end}]")]
    OutsideHorizon { t: f64, t_begin: f64, t_end: f64 },

    #[error("moment condition violated for fractional driver: {0}")]
    MomentCondition(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
