//! Objective, optimizer, schedule and the training loop.

mod loss;
mod optim;
mod trainer;

pub use loss::cross_entropy_values;
pub use optim::{clip_grad_norm, cosine_lr, Adam, AdamConfig, LrSchedule};
pub use trainer::{evaluate, train_loop, EpochRecord, RunOutput, TrainConfig, TrainReport, Trainer};
