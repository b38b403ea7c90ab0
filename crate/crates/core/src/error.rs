use thiserror::Error;

use crate::types::{CompressionTrace, ConfigViolation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", join_violations(.0))]
    Config(Vec<ConfigViolation>),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("attention row {row} of head ({layer}, {head}) sums to {sum}, expected 1")]
    Stochasticity {
        layer: usize,
        head: usize,
        row: usize,
        sum: f64,
    },

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("probability {0} outside (0, 1]")]
    Domain(f64),

    #[error("no scripted response for sequence [{0}]")]
    ScriptedMiss(String),

    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("scorer capacity exceeded: {requested} tokens, limit {limit}")]
    Capacity { requested: usize, limit: usize },

    #[error("scorer service error ({kind}): {message}")]
    Service { kind: String, message: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("compressed tokens are not a subsequence of the original: {0}")]
    NotSubsequence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("trace format: {0}")]
    TraceFormat(String),

    /// A scorer failed mid-run; the stages completed so far are preserved.
    #[error("compression aborted at stage {stage}: {source}")]
    Aborted {
        stage: usize,
        #[source]
        source: Box<Error>,
        partial: Box<CompressionTrace>,
    },
}

impl Error {
    /// True for failures that came from the scoring backend rather than from
    /// configuration or input validation.
    pub fn is_scorer_failure(&self) -> bool {
        match self {
            Error::ScriptedMiss(_)
            | Error::Transport { .. }
            | Error::Protocol(_)
            | Error::Capacity { .. }
            | Error::Service { .. } => true,
            Error::Aborted { source, .. } => source.is_scorer_failure(),
            _ => false,
        }
    }

    pub fn partial_trace(&self) -> Option<&CompressionTrace> {
        match self {
            Error::Aborted { partial, .. } => Some(partial),
            _ => None,
        }
    }
}

fn join_violations(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
