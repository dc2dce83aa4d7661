use std::fmt;

use fmpx::Error;

/// Process exit codes.
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub msg: String,
    pub bad_input: bool,
}

impl CliError {
    pub fn input(kind: &'static str, msg: impl Into<String>) -> Self {
        CliError {
            kind,
            msg: msg.into(),
            bad_input: true,
        }
    }

    pub fn internal(kind: &'static str, msg: impl Into<String>) -> Self {
        CliError {
            kind,
            msg: msg.into(),
            bad_input: false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.bad_input {
            EXIT_BAD_INPUT
        } else {
            EXIT_INTERNAL
        }
    }
}

impl fmt::Display for CliError {
    /// Single line: `error: kind=<kind> msg=<message>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.msg.replace('\n', " ");
        write!(f, "error: kind={} msg={msg}", self.kind)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match &e {
            Error::Checkpoint { source, .. } => CliError::input("checkpoint", format!("{msg} (code {})", source.code())),
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => CliError::input("io", msg),
            Error::Io { .. } => CliError::internal("io", msg),
            Error::Image { .. } => CliError::input("image", msg),
            Error::Dataset(_) => CliError::input("dataset", msg),
            Error::Parse(_) => CliError::input("parse", msg),
            Error::InvalidConfig(_) => CliError::input("config", msg),
            Error::InvalidArgument(_) => CliError::input("argument", msg),
            Error::ShapeMismatch { .. } | Error::InvalidShape { .. } => CliError::input("shape", msg),
            Error::NonFinite(_) => CliError::internal("non_finite", msg),
            Error::NonDeterministic => CliError::internal("internal", msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps a filesystem error with the path it concerns.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == std::io::ErrorKind::NotFound {
        CliError::input("io", msg)
    } else {
        CliError::internal("io", msg)
    }
}
