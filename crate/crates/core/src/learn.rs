//! Parameters, closed-form gradients, finite-difference verification,
//! AdamW with a cosine schedule, the episodic training loop and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{finite_diff_check, GradCheckReport, TensorCheck};
pub use model::{episode_loss, forward_backward, LossBreakdown, LossConfig};
pub use optim::{optimizer_step, AdamWConfig, OptimizerState};
pub use params::{ModelDims, ParamId, ParamStore};
pub use train::{train, HistoryPoint, TrainConfig, TrainOutcome};
