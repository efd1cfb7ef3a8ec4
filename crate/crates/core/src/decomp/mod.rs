//! Parallel decomposition: channels across the workers of one
//! reconstruction, and consecutive frames across reconstruction threads.

pub mod channels;
pub mod temporal;

pub use channels::{all_reduce_sum, partition_channels, WorkerGroup, GROUP_SIZE_MAX};
pub use temporal::{
    h, run_series, AuditEntry, Ledger, ReconDone, ReconJob, TemporalExecutor, TemporalSchedule,
};
