//! Building merged systems, deleting tasks, and accounting for the cost.

mod cluster;
mod ledger;
mod system;

pub use cluster::{cluster_random, ClusteredSystem};
pub use ledger::{
    deletion_cost, project_clustered_cost, project_total_cost, CostLedger, CostProjection, LedgerEvent, Phase,
    PhaseCost, StorageReport,
};
pub use system::{
    digest, Digest, EngineConfig, EvalMode, Evaluation, ExactnessReport, RegistryEntry, System, TaskAccuracy,
    UnlearnOutcome,
};
