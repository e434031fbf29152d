//! Optimization, training loops and the evaluation protocol.

pub mod config;
pub mod eval;
pub mod gradsuite;
pub mod optim;
pub mod train;

pub use config::TrainConfig;
pub use eval::{evaluate_future, evaluate_now, score_future, FutureEvaluation};
pub use optim::{adam_step, lr_schedule, OptimizerState};
pub use train::{train_autoregressive, train_future, train_now, TrainLog};
