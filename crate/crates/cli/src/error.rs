use thiserror::Error;

/// Failures of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, missing files: exit code 1.
    #[error("usage error: {0}")]
    Usage(String),
    /// Unreadable or inconsistent data: exit code 2.
    #[error("data error: {0}")]
    Data(String),
    /// Divergence or other numerical breakdown: exit code 3.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

fn is_numerical(e: &sbsr::Error) -> bool {
    use sbsr::Error as E;
    match e {
        E::Numerical(_) | E::Diverged { .. } | E::DegenerateGradient => true,
        E::Sample { source, .. } => is_numerical(source),
        _ => false,
    }
}

impl From<sbsr::Error> for CliError {
    fn from(e: sbsr::Error) -> Self {
        if is_numerical(&e) {
            CliError::Numerical(e.to_string())
        } else if let sbsr::Error::InvalidInput(_) = e {
            CliError::Usage(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
