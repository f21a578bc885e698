use std::path::PathBuf;

use thiserror::Error;

use crate::hardware::Engine;
use crate::workload::Phase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("op `{op}` cannot execute on the {engine} engine")]
    WrongEngine { op: String, engine: Engine },

    #[error("infeasible mapping for op `{op}`: {reason}")]
    Infeasible { op: String, reason: String },

    #[error("DRAM capacity exceeded: need {needed} bytes, have {available} bytes")]
    Capacity { needed: u64, available: u64 },

    #[error("strategy `{strategy}` has no engine for the {phase} phase")]
    PhaseUnsupported { strategy: String, phase: Phase },

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("unknown engine `{0}`")]
    UnknownEngine(String),

    #[error("{}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },

    #[error("failed to read {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
