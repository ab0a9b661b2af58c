use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no template match: every candidate window had zero variance")]
    NoMatch,

    #[error("degenerate sample: {0}")]
    Degenerate(String),

    #[error("{path}: {problems}")]
    Parse { path: String, problems: ParseProblems },

    #[error("format error: {0}")]
    Format(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidShape(_)
                | Error::InvalidInput(_)
                | Error::Parse { .. }
                | Error::Format(_)
                | Error::Degenerate(_)
        )
    }
}

/// Line-numbered problems collected while parsing a text file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseProblems(pub Vec<(u64, String)>);

impl std::fmt::Display for ParseProblems {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (line, msg)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "line {line}: {msg}")?;
        }
        Ok(())
    }
}
