//! The PointGoal task: environment, reward, randomisation, agents and
//! evaluation metrics.

mod agents;
mod env;
mod eval;
mod log;
mod metrics;

pub use agents::{Agent, LearnedAgent, OracleAgent, RandomAgent};
pub use env::{
    stream_rng, CameraConfig, Conditions, EnvConfig, EpisodeState, GoalObservation, NavEnv, Observation,
    ObservationKind, RandomizationConfig, RewardConfig, StepInfo, StepOutcome,
};
pub use eval::{evaluate, run_episode};
pub use log::{read_log, split_episodes, StepRecord, TrajectoryWriter};
pub use metrics::{spl, write_summary_csv, EpisodeResult, EvalReport, MeanStd, Metrics};
