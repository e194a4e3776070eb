//! Optimizer, learning-rate schedule, checkpoints, the training loop,
//! evaluation and the length/duty sweep.

mod adan;
mod checkpoint;
mod config;
mod eval;
mod schedule;
mod sweep;
mod trainer;

pub use adan::{Adan, AdanSlot, OptimizerConfig};
pub use checkpoint::{BestRecord, Checkpoint, OptimizerState, FORMAT_VERSION};
pub use config::{DataConfig, NetworkWidths, Precision, TrainConfig};
pub use eval::{evaluate, Decomposer, EvalOptions, EvalReport, OracleDecomposer, VideoSummary, WindowRow};
pub use schedule::lr_schedule;
pub use sweep::{cell_code, length_cell_ones, sweep, CellKind, Duty, SweepCell, SweepConfig, SweepTable};
pub use trainer::{train, EpochLog, StepRecord, TrainOptions, TrainOutcome, Trainer};
