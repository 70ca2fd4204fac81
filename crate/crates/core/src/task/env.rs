use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{crop, integrate, random_downsample, voxel_downsample, DownsampleConfig, KeyframeBuffer, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{compose, to_base_frame, wrap_angle, CameraModel, CameraMount, DepthImage};
use crate::sim::{render_depth, step_agent, Action, AgentState, Episode, EpisodeSampler, FloorplanWorld, MotionNoiseModel, MotionParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Per-step penalty.
    pub slack: f64,
    pub success_reward: f64,
    /// Geodesic distance below which Stop counts as success, meters.
    pub success_distance: f64,
    pub terminate_on_collision: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            slack: 0.01,
            success_reward: 10.0,
            success_distance: 0.2,
            terminate_on_collision: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.slack >= 0.0 && self.success_reward > 0.0 && self.success_distance > 0.0) {
            return Err(Error::Config(format!("invalid reward config {self:?}")));
        }
        Ok(())
    }
}

/// Per-episode randomisation. Condition A draws a fresh camera mount and
/// field of view from the ranges; condition B enables motion noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizationConfig {
    pub camera_enabled: bool,
    pub motion_enabled: bool,
    /// Mount height range, meters.
    pub height: [f64; 2],
    /// Pitch range, radians (negative looks down).
    pub pitch: [f64; 2],
    /// Yaw offset range, radians.
    pub yaw: [f64; 2],
    /// Horizontal field-of-view range, radians.
    pub hfov: [f64; 2],
    pub motion: MotionNoiseModel,
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            camera_enabled: false,
            motion_enabled: false,
            height: [0.5, 1.5],
            pitch: [(-45f64).to_radians(), 0.0],
            yaw: [(-10f64).to_radians(), 10f64.to_radians()],
            hfov: [55f64.to_radians(), 90f64.to_radians()],
            motion: MotionNoiseModel::default(),
        }
    }
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("height", self.height), ("pitch", self.pitch), ("yaw", self.yaw), ("hfov", self.hfov)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(Error::Config(format!("randomization.{name}: low must not exceed high")));
            }
        }
        if !(self.hfov[0] > 0.0 && self.hfov[1] < std::f64::consts::PI && self.height[0] > 0.0) {
            return Err(Error::Config("randomization: hfov must lie in (0, π) and height be positive".into()));
        }
        if !(self.motion.trans_sigma >= 0.0 && self.motion.rot_sigma >= 0.0) {
            return Err(Error::Config("motion noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn with_conditions(mut self, c: Conditions) -> Self {
        self.camera_enabled = c.camera;
        self.motion_enabled = c.motion;
        self
    }

    pub fn draw_mount<R: Rng + ?Sized>(&self, rng: &mut R) -> CameraMount {
        let u = |rng: &mut R, r: [f64; 2]| if r[0] == r[1] { r[0] } else { rng.random_range(r[0]..=r[1]) };
        CameraMount {
            height: u(rng, self.height),
            pitch: u(rng, self.pitch),
            yaw: u(rng, self.yaw),
            hfov: u(rng, self.hfov),
        }
    }
}

/// Which randomisation axes are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Conditions {
    /// Condition A.
    pub camera: bool,
    /// Condition B.
    pub motion: bool,
}

impl Conditions {
    pub const NONE: Conditions = Conditions { camera: false, motion: false };
    pub const A: Conditions = Conditions { camera: true, motion: false };
    pub const B: Conditions = Conditions { camera: false, motion: true };
    pub const AB: Conditions = Conditions { camera: true, motion: true };

    pub fn label(self) -> &'static str {
        match (self.camera, self.motion) {
            (false, false) => "none",
            (true, false) => "A",
            (false, true) => "B",
            (true, true) => "AB",
        }
    }
}

impl std::str::FromStr for Conditions {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Conditions::NONE),
            "A" | "a" => Ok(Conditions::A),
            "B" | "b" => Ok(Conditions::B),
            "AB" | "ab" | "A+B" => Ok(Conditions::AB),
            other => Err(format!("unknown conditions {other:?} (expected none, A, B or AB)")),
        }
    }
}

impl std::fmt::Display for Conditions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Mount used when condition A is off.
    pub mount: CameraMount,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 64,
            height: 64,
            mount: CameraMount {
                height: 1.0,
                pitch: (-20f64).to_radians(),
                yaw: 0.0,
                hfov: 70f64.to_radians(),
            },
            min_depth: 0.1,
            max_depth: 10.0,
        }
    }
}

impl CameraConfig {
    pub fn model(&self, mount: &CameraMount) -> Result<CameraModel> {
        CameraModel::from_mount(self.width, self.height, mount, self.min_depth, self.max_depth)
    }
}

/// What the environment assembles into each observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationKind {
    /// Integrated, cropped and downsampled base-frame cloud.
    Cloud,
    /// Raw depth image only.
    Depth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub camera: CameraConfig,
    pub downsample: DownsampleConfig,
    pub keyframe_capacity: usize,
    pub reward: RewardConfig,
    pub randomization: RandomizationConfig,
    pub motion: MotionParams,
    pub footprint_radius: f64,
    pub max_steps: usize,
    /// Geodesic range of sampled episodes, meters.
    pub min_geodesic: f64,
    pub max_geodesic: f64,
    /// End the episode on any Stop, not only a successful one.
    pub stop_ends_episode: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            camera: CameraConfig::default(),
            downsample: DownsampleConfig::default(),
            keyframe_capacity: 8,
            reward: RewardConfig::default(),
            randomization: RandomizationConfig::default(),
            motion: MotionParams::default(),
            footprint_radius: 0.25,
            max_steps: 500,
            min_geodesic: 1.0,
            max_geodesic: 6.0,
            stop_ends_episode: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.randomization.validate()?;
        self.downsample.validate()?;
        self.camera.model(&self.camera.mount)?;
        if self.keyframe_capacity == 0 || self.max_steps == 0 {
            return Err(Error::Config("keyframe_capacity and max_steps must be positive".into()));
        }
        if !(self.footprint_radius > 0.0) {
            return Err(Error::Config("footprint_radius must be positive".into()));
        }
        if !(self.min_geodesic > 0.0 && self.min_geodesic <= self.max_geodesic) {
            return Err(Error::Config("need 0 < min_geodesic ≤ max_geodesic".into()));
        }
        if !(self.motion.forward_step > 0.0 && self.motion.turn_angle > 0.0) {
            return Err(Error::Config("motion steps must be positive".into()));
        }
        Ok(())
    }
}

/// Goal relative to the agent: straight-line range and bearing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalObservation {
    pub rho: f64,
    /// Radians in `(−π, π]`, positive to the left.
    pub phi: f64,
}

impl GoalObservation {
    pub fn new(state: &AgentState, goal: (f64, f64)) -> Self {
        let (dx, dy) = (goal.0 - state.x, goal.1 - state.y);
        GoalObservation {
            rho: dx.hypot(dy),
            phi: wrap_angle(dy.atan2(dx) - state.heading),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Observation {
    /// Base-frame cloud of exactly `target_points` (empty for depth-only).
    pub cloud: PointCloud,
    pub depth: Option<DepthImage>,
    pub goal: GoalObservation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub success: bool,
    pub collision: bool,
    pub timeout: bool,
    pub geodesic_to_goal: f64,
    pub path_length: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// State of the running episode.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub id: u64,
    pub world: usize,
    pub episode: Episode,
    pub agent: AgentState,
    pub mount: CameraMount,
    pub camera: CameraModel,
    pub steps: usize,
    pub path_length: f64,
    pub geodesic: f64,
    pub total_reward: f64,
    pub collided: bool,
    pub done: bool,
}

/// PointGoal environment over a corpus of worlds. Owns its random stream.
pub struct NavEnv {
    pub config: EnvConfig,
    pub kind: ObservationKind,
    samplers: Vec<EpisodeSampler>,
    rng: ChaCha8Rng,
    keyframes: KeyframeBuffer,
    state: Option<EpisodeState>,
    next_id: u64,
}

/// Independent stream for `(seed, stream)`, e.g. one per rollout worker.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

impl NavEnv {
    pub fn new(worlds: &[Arc<FloorplanWorld>], config: EnvConfig, kind: ObservationKind, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        if worlds.is_empty() {
            return Err(Error::contract("environment needs at least one world"));
        }
        let samplers = worlds
            .iter()
            .map(|w| EpisodeSampler::new(Arc::clone(w), config.footprint_radius))
            .collect();
        Ok(NavEnv {
            keyframes: KeyframeBuffer::new(config.keyframe_capacity),
            config,
            kind,
            samplers,
            rng,
            state: None,
            next_id: 0,
        })
    }

    pub fn state(&self) -> Option<&EpisodeState> {
        self.state.as_ref()
    }

    pub fn world(&self, idx: usize) -> &Arc<FloorplanWorld> {
        &self.samplers[idx].world
    }

    pub fn num_worlds(&self) -> usize {
        self.samplers.len()
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Draws a world and an episode from `rng` without touching the env stream.
    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(usize, Episode)> {
        let world = rng.random_range(0..self.samplers.len());
        let ep = self.samplers[world].sample(rng, self.config.min_geodesic, self.config.max_geodesic)?;
        Ok((world, ep))
    }

    pub fn reset(&mut self) -> Result<Observation> {
        let world = self.rng.random_range(0..self.samplers.len());
        let episode = self.samplers[world].sample(&mut self.rng, self.config.min_geodesic, self.config.max_geodesic)?;
        self.begin(world, episode)
    }

    /// Starts a given episode (camera draw and observation as in `reset`).
    pub fn begin(&mut self, world: usize, episode: Episode) -> Result<Observation> {
        let rc = &self.config.randomization;
        let mount = if rc.camera_enabled {
            rc.draw_mount(&mut self.rng)
        } else {
            self.config.camera.mount
        };
        let camera = self.config.camera.model(&mount)?;
        let geodesic = episode.field.distance_interp(episode.start.x, episode.start.y)?;
        self.keyframes.clear();
        self.state = Some(EpisodeState {
            id: self.next_id,
            world,
            agent: episode.start,
            episode,
            mount,
            camera,
            steps: 0,
            path_length: 0.0,
            geodesic,
            total_reward: 0.0,
            collided: false,
            done: false,
        });
        self.next_id += 1;
        self.observe()
    }

    fn observe(&mut self) -> Result<Observation> {
        let st = self.state.as_ref().expect("active episode");
        let world = &self.samplers[st.world].world;
        let base = st.agent.pose();
        let cam_world = compose(&base, &st.camera.extrinsic)?;
        let depth = render_depth(world, &cam_world, &st.camera)?;
        let goal = GoalObservation::new(&st.agent, st.episode.goal);
        match self.kind {
            ObservationKind::Depth => Ok(Observation {
                cloud: PointCloud::empty(crate::geom::Frame::Base),
                depth: Some(depth),
                goal,
            }),
            ObservationKind::Cloud => {
                let cloud = to_base_frame(&depth, &st.camera)?;
                self.keyframes.push(cloud, base.clone())?;
                let ds = &self.config.downsample;
                let merged = integrate(&self.keyframes, &base)?;
                let cropped = crop(&merged, ds.crop_half_extent);
                let vox = voxel_downsample(&cropped, ds.voxel_size)?;
                let cloud = random_downsample(&vox, ds.target_points, &mut self.rng)?;
                Ok(Observation {
                    cloud,
                    depth: Some(depth),
                    goal,
                })
            }
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let noise = {
            let rc = &self.config.randomization;
            MotionNoiseModel {
                enabled: rc.motion_enabled,
                ..rc.motion
            }
        };
        let st = self
            .state
            .as_mut()
            .ok_or_else(|| Error::contract("step called before reset"))?;
        if st.done {
            return Err(Error::contract("step called after the episode ended"));
        }
        let world = &self.samplers[st.world].world;
        let (next, collided) = step_agent(&st.agent, action, world, &self.config.motion, &noise, &mut self.rng);
        st.path_length += (next.x - st.agent.x).hypot(next.y - st.agent.y);
        st.agent = next;
        st.steps += 1;
        st.collided |= collided;
        let geo = st.episode.field.distance_interp(next.x, next.y)?;
        let rc = &self.config.reward;
        let success = action == Action::Stop && geo < rc.success_distance;
        let mut reward = -rc.slack - (geo - st.geodesic);
        if success {
            reward += rc.success_reward;
        }
        st.geodesic = geo;
        st.total_reward += reward;
        let collision_end = collided && rc.terminate_on_collision;
        let timeout = st.steps >= self.config.max_steps;
        let stop_end = action == Action::Stop && self.config.stop_ends_episode;
        st.done = success || collision_end || timeout || stop_end;
        let info = StepInfo {
            success,
            collision: collided,
            timeout: timeout && !success && !collision_end,
            geodesic_to_goal: geo,
            path_length: st.path_length,
        };
        let done = st.done;
        let observation = self.observe()?;
        Ok(StepOutcome {
            observation,
            reward,
            done,
            info,
        })
    }
}
