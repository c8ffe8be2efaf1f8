use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// Testable identification conditions, named by their conventional labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// At least `J-1` equal-utility action/state pairs.
    EqualityPairs,
    /// The pair transition-difference matrix has full column rank.
    PairRank,
    /// Panel length `T >= 3J - 1`.
    PanelLength,
    /// The stacked system matrix has full row rank.
    SystemRank,
    /// Macro-state panel length `(T-2) M >= 3(J-1)`.
    MacroPanelLength,
    /// The macro-state system matrix has full row rank.
    MacroSystemRank,
}

impl Assumption {
    pub fn label(self) -> &'static str {
        match self {
            Assumption::EqualityPairs => "Assumption 4(a)",
            Assumption::PairRank => "Assumption 4(b)",
            Assumption::PanelLength => "Assumption 5(a)",
            Assumption::SystemRank => "Assumption 5(b)",
            Assumption::MacroPanelLength => "Assumption 8(a)",
            Assumption::MacroSystemRank => "Assumption 8(b)",
        }
    }
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Outcome of a single optimizer start, carried by [`Error::NonConvergence`].
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct StartRecord {
    pub start: Vec<f64>,
    pub converged: bool,
    pub final_loglik: f64,
    pub iterations: usize,
    pub estimate: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{assumption} violated: {detail}")]
    AssumptionViolation {
        assumption: Assumption,
        detail: String,
    },

    #[error("insufficient data{}: {detail}", assumption.map(|a| format!(" ({a})")).unwrap_or_default())]
    InsufficientData {
        assumption: Option<Assumption>,
        detail: String,
    },

    #[error("no optimizer start converged ({} starts tried)", records.len())]
    NonConvergence { records: Vec<StartRecord> },

    #[error("summary has no successful replications")]
    EmptySummary,

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn violation(assumption: Assumption, detail: impl Into<String>) -> Self {
        Error::AssumptionViolation {
            assumption,
            detail: detail.into(),
        }
    }

    /// The assumption this error names, if any.
    pub fn assumption(&self) -> Option<Assumption> {
        match self {
            Error::AssumptionViolation { assumption, .. } => Some(*assumption),
            Error::InsufficientData { assumption, .. } => *assumption,
            _ => None,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        match err.classify() {
            serde_json::error::Category::Io => Error::Io(err.into()),
            _ => Error::Parse(format!(
                "line {} column {}: {}",
                err.line(),
                err.column(),
                err
            )),
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(io) => Error::Io(io),
                other => Error::Parse(format!("{other:?}")),
            }
        } else {
            Error::Parse(err.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
