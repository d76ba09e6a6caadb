//! Losses, baselines and the optimization loop.

mod losses;
mod model;
mod node;
mod pinn;
mod train;

#[cfg(test)]
mod tests;

pub use losses::{
    data_loss, eval_metrics, fd_time_derivative, linspace, mean_squared_error, pinn_loss,
    pinn_loss_value, Metrics, FD_STEP,
};
pub use model::{average, load_model, Model, ModelKind};
pub use node::{NeuralOde, NodeConfig, NodeLayout};
pub use pinn::{IcWrapper, MlpPinn, PinnConfig, PinnLayout};
pub use train::{
    train, training_loss, write_history, LossReport, Problem, TrainConfig, TrainOutcome,
};
