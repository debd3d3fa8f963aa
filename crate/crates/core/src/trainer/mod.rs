//! Surrogate-loss training and the downstream prediction-model training
//! that consumes a frozen surrogate.

mod alternate;
mod config;
mod descent;
mod log;
mod penalty;
mod prediction;
mod surrogate;
mod task;

pub use alternate::{train_alternate, AlternateOutcome};
pub use config::{Mode, TrainerConfig};
pub use descent::{descend_inputs, descent_starts, DescentConfig, DescentTrace};
pub use log::{LogRow, TrainLog, TRAIN_LOG_HEADER};
pub use penalty::{gradient_penalty, penalty_node};
pub use prediction::{
    cross_entropy, prediction_loss_node, rank_loss, train_prediction_model, Classifier,
    ClassifierTrainer, FrozenLoss, LossMode, PredictionConfig, PredictionOutcome,
};
pub use surrogate::{
    draw_sub_batches, objective_node, pooled_losses, standardize_node,
    train_surrogate_approximation, train_surrogate_correlation, ObjectiveNodes, StopReason,
    SurrogateOutcome, SurrogateTrainer, ValidationPoint, CONVERGED_SPEARMAN,
};
pub use task::{ClassificationTask, Draw, MetricTask, SyntheticTask};
