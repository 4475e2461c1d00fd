//! Process exit codes: 0 success, 2 configuration, 3 capacity,
//! 4 quality gate; 1 for unexpected internal failures.

use std::fmt;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.msg)
    }
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }

    pub fn gate(msg: impl Into<String>) -> Self {
        CliError { code: 4, msg: msg.into() }
    }
}

impl From<dicke_core::Error> for CliError {
    fn from(e: dicke_core::Error) -> Self {
        use dicke_core::Error;
        let code = match &e {
            Error::Config(_) | Error::Domain(_) | Error::NonFinite(_) => 2,
            Error::Capacity(_) => 3,
            Error::ExcitationViolation { .. } | Error::Representation(_) => 1,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 1, msg: format!("i/o error: {e}") }
    }
}

pub type CliResult<T> = Result<T, CliError>;
