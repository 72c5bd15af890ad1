use std::fmt;

use thiserror::Error;

/// One violated invariant of a configuration value.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub field: String,
    pub constraint: &'static str,
    pub value: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: requires {} (got {})", self.field, self.constraint, self.value)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n{}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("steady state did not converge: residual {residual:e} exceeds {tolerance:e}")]
    NoConvergence { residual: f64, tolerance: f64 },

    #[error("branch selection: {0}")]
    Branch(String),

    #[error("inverse susceptibility vanishes at omega = {omega:e} rad/s")]
    SingularResponse { omega: f64 },

    #[error("no instability threshold below {ceiling_w:e} W (gamma_eff stays positive)")]
    NoThreshold { ceiling_w: f64 },

    #[error("pole search failed to converge near {omega:e} rad/s")]
    PoleSearch { omega: f64 },

    #[error("simulation plan invalid: {0}")]
    Plan(String),

    #[error("blow-up at t = {time:e} s: |x| of mode {mode} reached {value:e} m (ceiling {ceiling:e} m)")]
    BlowUp { time: f64, mode: String, value: f64, ceiling: f64 },

    #[error("unknown mode label {0:?}")]
    UnknownMode(String),

    #[error("exponential fit rejected: R^2 = {r_squared:.4} below {required}")]
    FitQuality { r_squared: f64, required: f64 },

    #[error("no saturated limit-cycle window for mode {0}")]
    NotSaturated(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("calibration tone not found: {0}")]
    ToneNotFound(String),

    #[error("frequency bands overlap: {0}")]
    BandOverlap(String),

    #[error("spectrum span {span_hz:e} Hz does not reach {needed_hz:e} Hz")]
    Span { span_hz: f64, needed_hz: f64 },

    #[error("required feedback gain {required:e} N*s exceeds ceiling {ceiling:e} N*s")]
    UnreachableGain { required: f64, ceiling: f64 },

    #[error("target frequency {omega:e} rad/s lies outside the chain passband")]
    OutsidePassband { omega: f64 },

    #[error("unit mismatch: {0} vs {1}")]
    UnitMismatch(String, String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  - {x}")).collect::<Vec<_>>().join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
