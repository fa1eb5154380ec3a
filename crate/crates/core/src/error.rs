use std::fmt;

use thiserror::Error;

use crate::sim::SimTime;

/// A parse failure tied to a 1-based input line.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

/// All parse errors found in one input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ParseErrors(pub Vec<ParseError>);

impl fmt::Display for ParseErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}, current time is {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invariant violated at {time}: {message}")]
    Invariant { time: SimTime, message: String },
    #[error(transparent)]
    Parse(#[from] ParseErrors),
    #[error("malformed dump `{file}`: {message}")]
    Dump { file: String, message: String },
    #[error("check `{name}` misconfigured: {message}")]
    CheckConfig { name: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
