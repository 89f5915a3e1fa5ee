//! Run configuration, checkpoints and reports.

mod checkpoint;
mod config;
mod report;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{stream_seed, DataSource, RunConfig};
pub use report::{evaluation_rows, ledger_rows, projection_rows, write_csv, ReportRow, Summary};
