//! Label-propagation objective, the adaptation training loop and evaluation.

mod objective;
mod trainer;

pub use objective::{
    consistency_reg, pseudo_label, softmax_rows, supervised_loss, total_loss, NeighborSet, RegTerm,
};
pub use trainer::{
    accuracy, evaluate, fit_image_windows, images_for, stored_windows, step_objective, train, EpochMetrics, StepObjective, StepReport, TrainConfig,
    TrainOutcome, WINDOW_BUFFER,
};
