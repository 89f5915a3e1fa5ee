//! Exact unlearning through model merging with sign-fixed tuning masks.
//!
//! Task vectors are trained deterministically, quantized onto a 64-bit
//! fixed-point grid and summed. Removing a task replays its finetune and
//! subtracts the result, which leaves a state bit-identical to merging the
//! remaining tasks from scratch.

pub mod data;
pub mod engine;
pub mod error;
pub mod merging;
pub mod param;
pub mod persist;
pub mod trainer;

pub use data::{Example, TaskId, TaskSpec};
pub use engine::{ClusteredSystem, CostLedger, EngineConfig, EvalMode, ExactnessReport, System};
pub use error::{Error, Result};
pub use merging::{Divisor, MergedState, Method};
pub use param::{BitMask, FxpVector, ParamVector, PrngStream, SignVector};
pub use trainer::{ModelSpec, TaskVector, TrainConfig};
