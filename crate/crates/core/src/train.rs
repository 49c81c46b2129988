//! Training loops and evaluation: single-task, pre-training schedules, and
//! dynamically sampled multi-task training with early stopping.

pub mod logs;
pub mod metrics;
pub mod run;

pub use logs::{epoch_csv_string, ResultRecord};
pub use metrics::{eval_from_counts, evaluate_stress, validate, EvalResult};
pub use run::{
    multitask_train, pretrain_then_finetune, EpochReport, RunOutput, TaskBinding, TrainConfig,
};

#[cfg(test)]
mod tests;
