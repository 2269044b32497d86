//! Exit codes, a stable contract for scripts.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Io = 1,
    Config = 2,
    Aborted = 3,
    Validation = 4,
    Divergence = 5,
    ReplayMiss = 6,
    Schema = 7,
    Backend = 8,
}

impl Exit {
    pub fn code(self) -> u8 {
        self as u8
    }
}

/// An error together with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl Failure {
    pub fn new(exit: Exit, error: impl Into<anyhow::Error>) -> Self {
        Self { exit, error: error.into() }
    }

    pub fn msg(exit: Exit, msg: impl fmt::Display) -> Self {
        Self::new(exit, anyhow::anyhow!("{msg}"))
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;
