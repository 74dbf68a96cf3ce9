//! Error taxonomy for the crate.
//!
//! Construction and validation failures are reported with enough context to
//! fix the input (every violated constraint, not just the first one found).
//! Numerical failures that indicate a bug rather than a bad input — a singular
//! solve on a matrix proven nonsingular, disagreeing dual-route computations —
//! surface as [`Error::Internal`] so callers can distinguish "your chain is
//! wrong" from "this library is wrong".

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or vector had the wrong dimensions for the operation.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: String,
        got: String,
    },

    /// The matrix is not a conservative generator. All violations are listed.
    #[error("invalid generator: {}", issues.join("; "))]
    InvalidGenerator { issues: Vec<String> },

    /// The positivity pattern of the generator is not strongly connected.
    #[error("chain is reducible: {0} communicating classes (need exactly one)")]
    Reducible(usize),

    /// Detailed balance fails beyond tolerance for an operation that needs it.
    #[error("chain is not reversible: max |pi_i q_ij - pi_j q_ji| = {residual:.3e}")]
    NotReversible { residual: f64 },

    /// A target set was empty, out of range, or otherwise unusable.
    #[error("invalid target set: {0}")]
    Target(String),

    /// An argument sits outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Exponential-moment solve requested at or beyond the blow-up threshold.
    #[error(
        "exponential moment diverges: alpha = {alpha:.6e} >= critical value {alpha_star:.6e}"
    )]
    Blowup { alpha: f64, alpha_star: f64 },

    /// A mode check on a time profile failed (support, smoothness, sign, ...).
    #[error("psi function unsuitable: {0}")]
    PsiMode(String),

    /// Contour truncation error estimate exceeds the requested tolerance.
    #[error(
        "contour truncated too early: error bound {bound:.3e} > tolerance {tol:.3e} \
         (increase the imaginary cutoff to about {suggested:.3e})"
    )]
    Truncation { bound: f64, tol: f64, suggested: f64 },

    /// Time-domain truncation error estimate exceeds the requested tolerance.
    #[error(
        "integration horizon too short: tail estimate {estimate:.3e} > tolerance {tol:.3e} \
         (increase the horizon to about {suggested:.3e})"
    )]
    Horizon { estimate: f64, tol: f64, suggested: f64 },

    /// Set geometry rules out the requested construction (overlap, leaks, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An iterative routine failed to converge within its budget.
    #[error("no convergence: {0}")]
    NoConvergence(String),

    /// Expression parse failure, with a byte offset into the source.
    #[error("parse error at byte {pos}: {msg}")]
    Parse { msg: String, pos: usize },

    /// Configuration rejected; every problem found is listed.
    #[error("invalid configuration:\n{}", issues.iter().map(|s| format!("  - {s}")).collect::<Vec<_>>().join("\n"))]
    Config { issues: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Invariant violation inside the library. Always a bug; please report.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Process exit code for the CLI: bad input configuration vs. everything
    /// else that is not a check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Shape { .. }
            | Error::InvalidGenerator { .. }
            | Error::Reducible(_)
            | Error::NotReversible { .. }
            | Error::Target(_)
            | Error::Domain(_)
            | Error::PsiMode(_)
            | Error::Geometry(_)
            | Error::Parse { .. }
            | Error::Config { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Blowup { .. }
            | Error::Truncation { .. }
            | Error::Horizon { .. }
            | Error::NoConvergence(_)
            | Error::Internal(_) => 3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_carry_context() {
        let e = Error::Blowup {
            alpha: 2.5,
            alpha_star: 2.0,
        };
        let msg = e.to_string();
        assert!(msg.contains("2.5"), "{msg}");
        assert!(msg.contains("2.0"), "{msg}");

        let e = Error::Config {
            issues: vec!["seed missing".into(), "grid too small".into()],
        };
        let msg = e.to_string();
        assert!(msg.contains("seed missing") && msg.contains("grid too small"));
    }

    #[test]
    fn exit_codes_split_config_from_numerics() {
        assert_eq!(Error::Target("empty".into()).exit_code(), 2);
        assert_eq!(
            Error::Blowup {
                alpha: 1.0,
                alpha_star: 0.5
            }
            .exit_code(),
            3
        );
        assert_eq!(Error::Internal("x".into()).exit_code(), 3);
    }
}
