//! Optimization loops for every objective, with MLE warm-up, on-policy
//! rollout buffers, GAIL's alternating updates, checkpoints and history.

pub mod buffer;
pub mod config;
pub mod gail;
pub mod history;
pub mod train;

pub use buffer::{assemble_online_batch, sample_expert_batch, RolloutBuffer};
pub use config::{ExperimentConfig, ObjectiveKind};
pub use gail::{discriminator_step, gail_train_step, kl_weight_at, GailState, GailStepReport, SATURATION_STEPS};
pub use history::{EvalRecord, HistorySummary, TrainHistory, CSV_HEADER};
pub use train::{
    adam_config, eval_sampler, init_model, objective_at, prepare_data, train, train_resume, StepObserver, TrainData, TrainOptions, TrainOutcome,
};
