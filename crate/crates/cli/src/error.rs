use thiserror::Error;

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Flags or config entries that do not parse.
    #[error("usage: {0}")]
    Usage(String),
    /// Unreadable or malformed inputs, scorer replies included.
    #[error("data: {0}")]
    Data(String),
    /// Non-finite values during training or fine-tuning.
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<modflow::Error> for CliError {
    fn from(e: modflow::Error) -> Self {
        use modflow::Error as E;
        let msg = e.to_string();
        match e {
            E::NonFinite(_) | E::ZeroOldProbability(_) | E::MissingGradient(_) | E::TraceConsumed | E::Shape { .. } => {
                Self::Numeric(msg)
            }
            E::Invalid(_) => Self::Usage(msg),
            _ => Self::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
