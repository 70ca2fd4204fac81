//! PPO with generalised advantage estimation over synchronous recurrent rollouts.

mod config;
mod gae;
mod ppo;
mod rollout;
mod train;

pub use config::PpoConfig;
pub use gae::{compute_gae, normalize};
pub use ppo::{ppo_loss, ppo_update, LossStats, LossVars};
pub use rollout::{collect_rollouts, RolloutBatch, WorkerPool};
pub use train::{
    load_policy, load_worlds, save_checkpoint, train, CheckpointMeta, CheckpointScore, LoadedPolicy, MetricsRow,
    Scalar, TrainOptions, TrainSummary,
};
