use std::path::PathBuf;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is invalid. `key` names the offending field.
    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    /// The instrument has no in-sample covariance with the action.
    #[error("weak instrument: sum of (x - x_bar)(z - z_bar) is zero over {n} records")]
    WeakInstrument { n: usize },

    /// The regressor has no variance.
    #[error("degenerate regressor: every action is identical over {n} records")]
    Degenerate { n: usize },

    /// The k-arm interaction matrix is singular.
    #[error("rank-deficient interaction matrix; uncovered arm(s): {arms:?}")]
    RankDeficient { arms: Vec<usize> },

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("record {index} has arm {arm} outside the codomain of {arm_count} arm(s)")]
    ArmOutOfRange {
        index: usize,
        arm: usize,
        arm_count: usize,
    },

    /// The exploration bound only applies to a type that prefers control.
    #[error("prior mean {mu} is not negative; the type is not a never-taker")]
    NotNeverTaker { mu: f64 },

    /// The unrecommended first stage did not yield enough samples of each action.
    #[error(
        "first stage produced {control} control and {treatment} treatment samples, \
         needed {ell0} and {ell1}"
    )]
    InsufficientFirstStage {
        control: usize,
        treatment: usize,
        ell0: usize,
        ell1: usize,
    },

    #[error("horizon {horizon} is shorter than the {needed} rounds the sampling stage needs")]
    HorizonTooShort { horizon: usize, needed: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {message}")]
    Parse { context: String, message: String },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
