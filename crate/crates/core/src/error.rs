use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name}: {message}")]
    Parse { source_name: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("fine regions not inside any coarse region: {}", .0.join(", "))]
    UnassignedRegions(Vec<String>),

    #[error("coarse regions with no fine members: {}", .0.join(", "))]
    EmptyCoarseRegions(Vec<String>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (non-positive pivot at position {pivot}, value {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("{what} is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    Indefinite { what: String, min_eigenvalue: f64 },

    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite objective or gradient at {point:?}")]
    NonFinite { point: Vec<f64> },

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("fitting `{dataset}` failed: {source}")]
    Fit {
        dataset: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{} dataset fit(s) failed: {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Multiple(Vec<Error>),

    #[error("true value is zero for region `{0}`; percentage error undefined")]
    ZeroTruth(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(source_name: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::Indefinite { .. }
            | Error::NotSymmetric(_)
            | Error::NonFinite { .. }
            | Error::Optimization(_) => true,
            Error::Fit { source, .. } => source.is_numerical(),
            Error::Multiple(errs) => errs.iter().any(Error::is_numerical),
            _ => false,
        }
    }
}
