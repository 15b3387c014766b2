use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DressError> = std::result::Result<T, E>;

/// Which part of a joint fit failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ratio,
    Weighted,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Ratio => f.write_str("density-ratio"),
            Stage::Weighted => f.write_str("weighted-score"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DressError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular system (condition number {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("iterates diverged (parameter norm {norm:.3e}); the data may be separable")]
    Divergence { norm: f64 },

    #[error("rank deficient: numerical rank {rank}, required {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("{failed} of {total} replications failed")]
    ExperimentUnstable { failed: usize, total: usize },

    #[error("degenerate test: differences have zero sample variance")]
    DegenerateTest,

    #[error("{path}: line {line}{}: {message}", column.as_ref().map(|c| format!(", column {c}")).unwrap_or_default())]
    Ingest {
        path: PathBuf,
        line: usize,
        column: Option<String>,
        message: String,
    },

    #[error("{stage} stage: {source}")]
    Staged {
        stage: Stage,
        #[source]
        source: Box<DressError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DressError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        DressError::Contract(msg.into())
    }

    pub(crate) fn at(self, stage: Stage) -> Self {
        DressError::Staged {
            stage,
            source: Box::new(self),
        }
    }

    /// The underlying error with stage tags removed.
    pub fn root(&self) -> &DressError {
        match self {
            DressError::Staged { source, .. } => source.root(),
            other => other,
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::DressError::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
