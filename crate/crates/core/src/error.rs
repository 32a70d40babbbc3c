use thiserror::Error;

use crate::sim::SimError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("local placement requested by {0}, which runs no storage service")]
    NoLocalStorage(crate::sim::HostId),
    #[error("replication level {wanted} exceeds the {available} storage nodes")]
    TooManyReplicas { wanted: u32, available: u32 },
    #[error("unknown co-locate group {0:?}")]
    UnknownGroup(String),
}

/// Problems with a workload description, found while parsing or while replaying it.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("file {file:?} is read by task {task:?} but never written and not declared as an input")]
    ReadBeforeWrite { file: String, task: String },
    #[error("file {0:?} is used by a task but not declared in [files]")]
    UnknownFile(String),
    #[error("{0}")]
    Invalid(String),
    #[error("task {task:?}, op {index} (line {line}): {msg}")]
    Op {
        task: String,
        index: usize,
        line: usize,
        msg: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("invalid measurements: {0}")]
    Invalid(String),
    #[error(
        "derived storage time is not positive: mean full-op {full_ns} ns minus network {net_ns} ns, \
         manager {manager_ns} ns and control overhead {overhead_ns} ns leaves {storage_ns} ns"
    )]
    NonPositiveStorage {
        full_ns: f64,
        net_ns: f64,
        manager_ns: f64,
        overhead_ns: f64,
        storage_ns: f64,
    },
    #[error("zero-size mean {zero_ns} ns is smaller than the modeled control-message overhead {overhead_ns} ns")]
    NegativeManager { zero_ns: f64, overhead_ns: f64 },
}

/// Top-level error for a simulation run.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
}

impl Error {
    /// True for problems with the inputs, as opposed to failures during a run.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Config(_) | Error::Calibration(_) | Error::Io { .. } | Error::Format(_) => true,
            Error::Workload(w) => !matches!(w, WorkloadError::Op { .. }),
            Error::Sim(_) => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
