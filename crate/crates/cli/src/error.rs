use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const PARSE: i32 = 2;
    pub const RANK: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input files and arguments.
    #[error("{0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error(transparent)]
    Estimation(#[from] singest::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) | CliError::Io { .. } => exit::PARSE,
            CliError::Estimation(e) => match e {
                singest::Error::RankDeficient { .. } => exit::RANK,
                singest::Error::SingularTriangular { .. } | singest::Error::NonSquareFactor { .. } => exit::NUMERICAL,
                singest::Error::DimensionMismatch(_) | singest::Error::SizeLimit { .. } => exit::PARSE,
            },
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
