//! 2.5D indoor simulator: occupancy-grid worlds, a raycast depth camera,
//! swept-disk agent kinematics and a geodesic-distance oracle.

mod episode;
mod geodesic;
mod motion;
mod render;
mod world;

pub use episode::{sample_episode, Episode, EpisodeSampler, MAX_REJECTIONS};
pub use geodesic::{geodesic_distance, DistanceField, InflatedGrid};
pub use motion::{step_agent, Action, AgentState, MotionNoiseModel, MotionParams};
pub use render::render_depth;
pub use world::FloorplanWorld;
