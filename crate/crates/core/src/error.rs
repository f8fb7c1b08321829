use core::fmt;

/// Errors raised by the estimation and fusion routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix that must be inverted has a condition number above the cutoff.
    IllConditioned {
        condition: f64,
    },
    /// A covariance candidate has a clearly negative eigenvalue.
    NotPsd {
        min_eigenvalue: f64,
    },
    /// A noise covariance that gets inverted is not strictly positive definite.
    NotPositiveDefinite {
        min_eigenvalue: f64,
    },
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// Non-finite value where a real number is required.
    NonFinite {
        context: &'static str,
    },
    EmptyInput,
    /// A cross-covariance table lacks the entry for a pair of estimators.
    IncompleteTable {
        pair: (usize, usize),
    },
    /// Inputs that must share a time index disagree.
    StepMismatch {
        expected: usize,
        found: usize,
    },
    /// Measurements from different clusters were mixed in one fusion.
    ClusterMismatch {
        expected: usize,
        found: usize,
    },
    InvalidModel(&'static str),
    InvalidScenario(&'static str),
    /// A numeric failure inside a simulated run, tagged with where it happened.
    InRun {
        step: usize,
        cluster: Option<usize>,
        source: alloc::boxed::Box<Error>,
    },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IllConditioned { condition } => {
                write!(f, "matrix is ill-conditioned (condition estimate {condition:e})")
            }
            Error::NotPsd { min_eigenvalue } => write!(
                f,
                "matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::NotPositiveDefinite { min_eigenvalue } => write!(
                f,
                "noise covariance must be positive definite (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::DimensionMismatch {
                context,
                expected,
                found,
            } => write!(
                f,
                "{context}: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::NonFinite { context } => write!(f, "{context}: non-finite entry"),
            Error::EmptyInput => f.write_str("nothing to fuse"),
            Error::IncompleteTable { pair } => write!(
                f,
                "cross-covariance table has no entry for estimators ({}, {})",
                pair.0, pair.1
            ),
            Error::StepMismatch { expected, found } => {
                write!(f, "time index mismatch: expected step {expected}, found {found}")
            }
            Error::ClusterMismatch { expected, found } => {
                write!(f, "cluster mismatch: expected {expected}, found {found}")
            }
            Error::InvalidModel(msg) => write!(f, "invalid model: {msg}"),
            Error::InvalidScenario(msg) => write!(f, "invalid scenario: {msg}"),
            Error::InRun { step, cluster, source } => match cluster {
                Some(c) => write!(f, "step {step}, cluster {c}: {source}"),
                None => write!(f, "step {step}, state fusion: {source}"),
            },
        }
    }
}

impl core::error::Error for Error {
    fn source(&self) -> Option<&(dyn core::error::Error + 'static)> {
        match self {
            Error::InRun { source, .. } => Some(source.as_ref()),
            _ => None,
        }
    }
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }

    pub(crate) fn in_run(self, step: usize, cluster: Option<usize>) -> Self {
        Error::InRun {
            step,
            cluster,
            source: alloc::boxed::Box::new(self),
        }
    }
}
