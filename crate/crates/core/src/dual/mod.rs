//! Dual side: DeepMartingale penalties, the pathwise upper-bound recursion,
//! the D1/D2 losses and the backward-sweep trainer.

mod baseline;
mod penalty;
mod recursion;
mod stage;
mod train;

pub use baseline::Baseline;
pub use penalty::{all_increments, martingale_increments, DualPenalty, PenaltyArch};
pub use recursion::{dual_backward, dual_step, loss_l2, loss_upper, DualValues};
pub use stage::{DualStage, StageGradients};
pub use train::{train_dual, write_trace_csv, DualLoss, DualTrainConfig, DualTrainResult, DualTrainer, TraceRow};
