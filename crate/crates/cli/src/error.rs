use thiserror::Error;

/// Command failure, classified by process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<rectikit::Error> for CliError {
    fn from(e: rectikit::Error) -> Self {
        use rectikit::Error as E;
        match e {
            E::Domain(_) | E::Range(_) | E::Argument(_) => CliError::Usage(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            // A corrupt checkpoint or pair file is a problem with an input file.
            E::Format(_) | E::Io(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
