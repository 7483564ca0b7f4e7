use std::path::PathBuf;

use crate::system::ValidationReport;

/// Errors surfaced by the analysis, filtering and simulation routines.
///
/// The variants split into three families that callers (the CLI in
/// particular) map onto distinct exit categories: structural problems with
/// the input, violated modelling assumptions, and numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("system violates modelling assumptions: {}", .0.messages.join("; "))]
    Assumption(Box<ValidationReport>),

    #[error("A is not diagonalizable: {0}")]
    NotDiagonalizable(String),

    #[error("system is not detectable: {0}")]
    NotDetectable(String),

    #[error("angle is undetermined; supply an angle hint or declare it irrational")]
    UndeterminedAngle,

    #[error("angle hint {numerator}/{denominator} is inconsistent with the eigenvalues (phi/2pi = {observed})")]
    AngleHintMismatch {
        numerator: i64,
        denominator: u64,
        observed: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("sweep inconclusive: {0}")]
    Inconclusive(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
