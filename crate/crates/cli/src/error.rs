use std::fmt;
use std::path::Path;

/// Exit code for invalid input: unreadable or malformed files, bad values,
/// degenerate geometry.
pub const EXIT_INVALID: i32 = 2;
/// Exit code for failures unrelated to the input, such as a port already in use.
pub const EXIT_RUNTIME: i32 = 1;

/// A one-line diagnostic and the process exit code it maps to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    /// `field: message`. An empty or root path (`.`) is omitted.
    pub fn field(path: &str, message: impl fmt::Display) -> Self {
        if path.is_empty() || path == "." {
            CliError::usage(message.to_string())
        } else {
            CliError::usage(format!("{path}: {message}"))
        }
    }

    /// Prefixes the field path with `parent`.
    pub fn under(self, parent: &str) -> Self {
        let message = match self.message.split_once(": ") {
            Some((field, rest)) if !field.contains(' ') => format!("{parent}.{field}: {rest}"),
            _ => format!("{parent}: {}", self.message),
        };
        CliError { message, ..self }
    }

    pub fn in_file(self, path: &Path) -> Self {
        CliError {
            message: format!("{}: {}", path.display(), self.message),
            ..self
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<mhi_core::Error> for CliError {
    fn from(e: mhi_core::Error) -> Self {
        CliError::usage(e.to_string())
    }
}
