use std::fmt;
use std::io;
use std::path::Path;

use serde::Serialize;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// An input file or directory is missing or unreadable (exit 2).
    Missing(String),
    /// Inputs exist but are inconsistent, malformed or out of range (exit 3).
    Validation(String),
    /// A numerical routine failed (exit 4).
    Numerical(String),
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: &'a str,
    exit_code: i32,
    message: &'a str,
}

impl CliError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        CliError::Missing(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Missing(_) => "missing_input",
            CliError::Validation(_) => "validation",
            CliError::Numerical(_) => "numerical",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Missing(m) | CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }

    /// Single-line JSON description for stderr.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorReport { error: self.kind(), exit_code: self.exit_code(), message: self.message() })
            .unwrap()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.message())
    }
}

impl From<pcc_core::Error> for CliError {
    fn from(e: pcc_core::Error) -> Self {
        use pcc_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Io(_) => CliError::Missing(msg),
            E::RankDeficient(_) | E::Numerical(_) => CliError::Numerical(msg),
            _ => CliError::Validation(msg),
        }
    }
}
