//! DPO / MODPO / SPO losses with analytic gradients, gradient-descent
//! training, sequential multi-objective pipelines and exact evaluation.

mod eval;
mod loss;
mod train;

pub use eval::{evaluate, EvalMetrics};
pub(crate) use eval::evaluate_indices;
pub use loss::{
    batch_loss_grad, dpo_sample_loss_grad, modpo_sample_loss_grad, pair_grad_diff, BatchLossGrad, MarginEntry,
    MarginSpec, SampleLoss,
};
pub use train::{save_train_log, train, train_sequential, Method, Stage, TrainConfig, TrainRun, DIVERGENCE_LIMIT};

#[cfg(test)]
mod tests;
