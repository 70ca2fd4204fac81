//! Run configuration: a TOML document whose every key has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::DownsampleConfig;
use crate::error::{Error, Result};
use crate::nn::{EncoderConfig, ObservationSpec, PolicyConfig};
use crate::rl::PpoConfig;
use crate::sim::MotionParams;
use crate::task::{CameraConfig, EnvConfig, ObservationKind, RandomizationConfig, RewardConfig};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "PCNAV_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldsConfig {
    /// Directories of `.map` files used for training.
    pub train: Vec<PathBuf>,
    /// Held-out directories for checkpoint selection and evaluation.
    pub eval: Vec<PathBuf>,
}

impl Default for WorldsConfig {
    fn default() -> Self {
        WorldsConfig {
            train: vec![PathBuf::from("worlds/simple/train")],
            eval: vec![PathBuf::from("worlds/simple/eval")],
        }
    }
}

/// Simulator settings not covered by a dedicated section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub downsample: DownsampleConfig,
    pub keyframe_capacity: usize,
    pub motion: MotionParams,
    pub footprint_radius: f64,
    pub max_steps: usize,
    pub min_geodesic: f64,
    pub max_geodesic: f64,
    pub stop_ends_episode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        let e = EnvConfig::default();
        SimConfig {
            downsample: e.downsample,
            keyframe_capacity: e.keyframe_capacity,
            motion: e.motion,
            footprint_radius: e.footprint_radius,
            max_steps: e.max_steps,
            min_geodesic: e.min_geodesic,
            max_geodesic: e.max_geodesic,
            stop_ends_episode: e.stop_ends_episode,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Episodes per evaluation seed.
    pub episodes: usize,
    /// Act greedily instead of sampling.
    pub greedy: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 20,
            greedy: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    pub train: u64,
    pub eval: Vec<u64>,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        SeedsConfig {
            train: 0,
            eval: vec![1, 2, 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub worlds: WorldsConfig,
    pub camera: CameraConfig,
    pub randomization: RandomizationConfig,
    pub reward: RewardConfig,
    pub sim: SimConfig,
    pub encoder: EncoderConfig,
    /// Recurrent state width.
    pub hidden: usize,
    pub ppo: PpoConfig,
    pub eval: EvalConfig,
    pub seeds: SeedsConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            worlds: WorldsConfig::default(),
            camera: CameraConfig::default(),
            randomization: RandomizationConfig::default(),
            reward: RewardConfig::default(),
            sim: SimConfig::default(),
            encoder: EncoderConfig::default(),
            hidden: PolicyConfig::default().hidden,
            ppo: PpoConfig::default(),
            eval: EvalConfig::default(),
            seeds: SeedsConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; missing keys take their defaults and unknown keys are rejected.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| parse_error(origin, text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Canonical TOML: every key spelled out in declaration order.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden must be positive".into()));
        }
        if self.worlds.train.is_empty() {
            return Err(Error::Config("worlds.train lists no directories".into()));
        }
        if self.eval.episodes == 0 || self.seeds.eval.is_empty() {
            return Err(Error::Config("evaluation needs episodes ≥ 1 and at least one seed".into()));
        }
        self.env_config().validate()?;
        self.ppo.validate()?;
        self.encoder
            .validate(self.sim.downsample.target_points, (self.camera.width, self.camera.height))?;
        Ok(())
    }

    pub fn env_config(&self) -> EnvConfig {
        let s = &self.sim;
        EnvConfig {
            camera: self.camera,
            downsample: s.downsample,
            keyframe_capacity: s.keyframe_capacity,
            reward: self.reward,
            randomization: self.randomization,
            motion: s.motion,
            footprint_radius: s.footprint_radius,
            max_steps: s.max_steps,
            min_geodesic: s.min_geodesic,
            max_geodesic: s.max_geodesic,
            stop_ends_episode: s.stop_ends_episode,
        }
    }

    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            encoder: self.encoder.clone(),
            hidden: self.hidden,
        }
    }

    pub fn observation_spec(&self) -> ObservationSpec {
        ObservationSpec {
            target_points: self.sim.downsample.target_points,
            image: (self.camera.width, self.camera.height),
            point_scale: self.sim.downsample.crop_half_extent,
            max_depth: self.camera.max_depth,
        }
    }

    pub fn observation_kind(&self) -> ObservationKind {
        if self.encoder.variant.uses_depth() {
            ObservationKind::Depth
        } else {
            ObservationKind::Cloud
        }
    }
}

fn parse_error(origin: &str, text: &str, e: &toml::de::Error) -> Error {
    let line = e
        .span()
        .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        path: origin.into(),
        line,
        message: e.message().to_string(),
    }
}
