//! Loss, optimizer and the training loop.

pub mod config;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use config::{Loss, RunConfig, TrainConfig};
pub use loss::{bce_loss, BCE_EPS};
pub use optim::{Sgd, SgdState};
pub use trainer::{
    evaluate, loss_and_grads, train, HistoryRecord, Sample, StepOutput, StopReason, TrainData, TrainOutputs,
    TrainSummary,
};
