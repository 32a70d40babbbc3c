//! Storage system model: configuration, calibrated service times, the metadata
//! manager and the queueing model of the deployed cluster.

pub mod cluster;
mod config;
mod manager;
mod profile;

pub use cluster::{Cluster, ClusterEvent, Completed, Fault, NetCounters, OpRequest, OpStats};
pub use config::{Placement, StorageConfig, Topology};
pub use manager::{
    plan_replicas, replica_select, ChunkMeta, FileMeta, FilePolicy, ManagerError, ManagerState, ReadSlice,
};
pub use profile::{HostOverride, PlatformProfile, DEFAULT_CONTROL_MESSAGE_SIZE, DEFAULT_FRAME_SIZE};
