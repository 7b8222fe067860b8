use thiserror::Error;

/// Errors raised by the factorization, conditioning, reduction and
/// estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A triangular factor has a diagonal entry whose magnitude is at or
    /// below the solve floor.
    #[error("singular triangular factor: diagonal entry {index} is below the floor{}", fmt_step(*step))]
    SingularTriangular { index: usize, step: Option<usize> },

    /// A factor that the model assumptions require to be invertible has a
    /// zero diagonal entry.
    #[error("rank-deficient {factor}{}", fmt_step(*step))]
    RankDeficient { factor: &'static str, step: Option<usize> },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Conditioning requires a square covariance factor.
    #[error("covariance factor is {rows}x{cols}; a square factor is required")]
    NonSquareFactor { rows: usize, cols: usize },

    #[error("dense joint law would have {size} coordinates, above the limit of {limit}")]
    SizeLimit { size: usize, limit: usize },
}

fn fmt_step(step: Option<usize>) -> String {
    match step {
        Some(t) => format!(" at time step {t}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a time step index to errors that carry one, keeping any
    /// index that is already present.
    pub fn at_step(self, t: usize) -> Self {
        match self {
            Error::SingularTriangular { index, step: None } => {
                Error::SingularTriangular { index, step: Some(t) }
            }
            Error::RankDeficient { factor, step: None } => {
                Error::RankDeficient { factor, step: Some(t) }
            }
            other => other,
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            Error::SingularTriangular { step, .. } | Error::RankDeficient { step, .. } => *step,
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
