//! Configuration, snapshots and tabular outputs.

pub mod config;
pub mod report;
pub mod snapshot;
pub mod table;

pub use config::RunConfig;
pub use snapshot::{params_digest, Snapshot};
pub use table::{OutputDir, Table};
