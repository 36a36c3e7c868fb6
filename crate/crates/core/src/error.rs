use std::fmt;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or structures that do not fit together.
    #[error("structural error: {0}")]
    Structure(String),

    /// A parameter outside the range where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// An exhaustive desk-scale oracle refused to run.
    #[error("enumeration guard exceeded: {what} ({count} > {limit})")]
    Guard {
        what: &'static str,
        count: u64,
        limit: u64,
    },

    #[error("infeasible constraint: distance from data to range is {distance:.6e} > radius {radius:.6e}")]
    Infeasible { distance: f64, radius: f64 },

    #[error("ellipticity violated: coefficient {value:.6e} at x = {x:.6}")]
    Ellipticity { value: f64, x: f64 },

    #[error("truncation unreachable: tail {achieved:.6e} after {j_max} terms exceeds target {target:.6e}")]
    Truncation {
        achieved: f64,
        target: f64,
        j_max: usize,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline stage an error originated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ellipticity,
    Truncation,
    IndexSet,
    Sampling,
    Snapshots,
    Recovery,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Config => "config",
            Stage::Ellipticity => "ellipticity",
            Stage::Truncation => "truncation",
            Stage::IndexSet => "index-set",
            Stage::Sampling => "sampling",
            Stage::Snapshots => "snapshots",
            Stage::Recovery => "recovery",
            Stage::Evaluation => "evaluation",
        };
        f.write_str(name)
    }
}

impl Error {
    pub(crate) fn at(self, stage: Stage) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by invalid inputs or configuration rather than I/O.
    pub fn is_validation(&self) -> bool {
        matches!(
            self.root(),
            Error::Structure(_)
                | Error::Domain(_)
                | Error::Guard { .. }
                | Error::Infeasible { .. }
                | Error::Ellipticity { .. }
                | Error::Truncation { .. }
                | Error::Parse(_)
                | Error::Validation(_)
                | Error::Toml(_)
        )
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
