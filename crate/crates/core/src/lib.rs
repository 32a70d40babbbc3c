//! Discrete-event performance model of an object-based distributed storage system
//! (metadata manager, storage nodes, client access modules) replaying workflow I/O
//! traces, with helpers to generate synthetic workloads and to calibrate service
//! times from measurements.

pub mod error;
pub mod net;
pub mod report;
pub mod sim;
pub mod storage;
pub mod synthgen;
pub mod sysid;
pub mod units;
pub mod workload;

pub use error::{Error, Result};
pub use report::{aggregate, compare, Ranking, RunReport};
pub use storage::{PlatformProfile, StorageConfig};
pub use workload::driver::{drive, DriveOptions};
pub use workload::{parse_workload, TaskGraph, Workload};
