//! Reverse-mode differentiation over dense matrices, the observation
//! encoders and the recurrent actor-critic.

mod encoders;
pub mod gradcheck;
mod graph;
mod layers;
mod optim;
mod params;
mod policy;
mod tensor;

pub use encoders::{
    farthest_point_sampling, knn, plan_multiscale, prepare_depth, prepare_points, Encoder, EncoderConfig,
    EncoderVariant, LevelConfig, LevelPlan, Prepared, CONV_SHAPES,
};
pub use graph::{Gradients, Graph, Var, GATHER_ZERO};
pub use layers::{kaiming_uniform, orthogonal, Conv2d, Gru, Init, Linear};
pub use optim::Adam;
pub use params::{Checkpoint, NamedArray, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use policy::{
    goal_features, greedy_action, log_softmax, sample_action, softmax, ActorCritic, ObservationSpec,
    PolicyConfig, PolicyInput, PolicyOutput, SequenceOutput, GOAL_DIM, NUM_ACTIONS,
};
pub use tensor::{matmul_acc, matmul_at_b_acc, DType, Real, Tensor};
