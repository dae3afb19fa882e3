use std::fmt;

use dynsparse::Error;

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or missing inputs: exit 2.
    Usage(String),
    /// Training aborted or a runtime error: exit 1.
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    /// Errors reading user-supplied inputs count as usage errors.
    pub fn input(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidSparsity(_) | Error::InvalidRatio(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}
