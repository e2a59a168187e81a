use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] projwass::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("{0}")]
    Input(String),
}

impl CliError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit status: 2 for bad input, 3 for solver non-convergence,
    /// 1 for anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.root() {
                projwass::Error::Convergence { .. } | projwass::Error::Retraction(_) => 3,
                projwass::Error::Internal(_) => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let conv = projwass::Error::Convergence {
            solver: "sinkhorn",
            iterations: 10,
            residual: 1.0,
        };
        assert_eq!(CliError::from(conv).exit_code(), 3);
        assert_eq!(CliError::from(projwass::Error::Input("x".into())).exit_code(), 2);
        assert_eq!(CliError::input("bad flag").exit_code(), 2);
        assert_eq!(CliError::from(projwass::Error::Internal("x".into())).exit_code(), 1);
    }
}
