//! Mapping failures onto process exit codes.

use std::fmt;

pub const USAGE: i32 = 2;
pub const DATA: i32 = 3;

/// An error that carries its exit code explicitly.
#[derive(Debug)]
pub struct Coded {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    Coded {
        code: USAGE,
        message: message.into(),
    }
    .into()
}

pub fn data(message: impl Into<String>) -> anyhow::Error {
    Coded {
        code: DATA,
        message: message.into(),
    }
    .into()
}

/// Exit code of a library error: problems with what the user asked for are
/// usage errors, problems with what is on disk are data errors.
pub fn library_code(e: &coolkws::Error) -> i32 {
    use coolkws::Error::*;
    match e {
        CorpusNotFound(_) | UnknownKeyword(_) | Config(_) | IncompatibleCheckpoint(_) => USAGE,
        _ => DATA,
    }
}

pub fn code_of(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<Coded>() {
            return c.code;
        }
        if let Some(l) = cause.downcast_ref::<coolkws::Error>() {
            return library_code(l);
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return DATA;
        }
    }
    1
}
