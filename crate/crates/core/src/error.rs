use thiserror::Error;

use crate::sched::ThreadId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A scenario or policy parameter is out of range. `path` names the
    /// offending configuration field.
    #[error("invalid configuration at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unknown thread id {0}")]
    UnknownThread(ThreadId),

    #[error("thread {0} is not a GC thread")]
    NotGcThread(ThreadId),

    #[error("criticality counter underflow on thread {0}")]
    CounterUnderflow(ThreadId),

    #[error("criticality table slot {index} shared by threads {first} and {second}")]
    IndexCollision {
        index: usize,
        first: ThreadId,
        second: ThreadId,
    },

    #[error("need at least {required} values, got {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("segment {segment} has {points} points, needs more than {needed}")]
    UnderdeterminedSegment {
        segment: usize,
        points: usize,
        needed: usize,
    },

    #[error("target load {target}% is unreachable (max observed {max_observed:.1}%)")]
    UnreachableTarget { target: f64, max_observed: f64 },

    /// A runtime invariant check failed during a simulation.
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
