//! Losses, dynamic weight averaging, the optimisation loop and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod loss;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, save_checkpoint, ArrayEntry, Manifest, FORMAT_VERSION, MANIFEST, WEIGHTS};
pub use gradcheck::{gradcheck, GradcheckConfig};
pub use loss::{dwa_weights, kl_loss, loss_graph, prediction_loss, LossReport, LossVars};
pub use trainer::{batch_gradient, evaluate_losses, train, BatchGrad, EpochReport, TrainConfig, TrainOutcome};
pub(crate) use trainer::mix;
