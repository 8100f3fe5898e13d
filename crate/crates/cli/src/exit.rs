use std::fmt;

use dpstream_core::Error;

pub const USAGE: u8 = 1;
pub const BUDGET: u8 = 2;
pub const DATA: u8 = 3;

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub err: anyhow::Error,
}

impl CliError {
    pub fn usage(msg: impl fmt::Display) -> Self {
        Self {
            code: USAGE,
            err: anyhow::anyhow!("{msg}"),
        }
    }

    pub fn data(err: impl Into<anyhow::Error>) -> Self {
        Self {
            code: DATA,
            err: err.into(),
        }
    }

    pub fn context(mut self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        self.err = self.err.context(ctx);
        self
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParameter { .. } | Error::MissingTheoryParam(_) => USAGE,
            _ => DATA,
        };
        Self { code, err: e.into() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
