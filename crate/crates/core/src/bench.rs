//! Steady-state latency measurements for the observation and inference paths.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cloud::{crop, integrate, random_downsample, voxel_downsample, DownsampleConfig, KeyframeBuffer};
use crate::error::{Error, Result};
use crate::geom::{compose, to_base_frame, Pose};
use crate::nn::{ActorCritic, EncoderConfig, EncoderVariant, ObservationSpec, ParamStore, PolicyConfig, PolicyInput, Tensor};
use crate::sim::{render_depth, FloorplanWorld};
use crate::task::CameraConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Raycast,
    Pipeline,
    Encoder,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raycast" => Ok(Suite::Raycast),
            "pipeline" => Ok(Suite::Pipeline),
            "encoder" => Ok(Suite::Encoder),
            other => Err(format!("unknown suite {other:?} (expected raycast, pipeline or encoder)")),
        }
    }
}

/// Latency percentiles in milliseconds.
#[derive(Clone, Debug, Serialize)]
pub struct BenchResult {
    pub name: String,
    pub iterations: usize,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
}

impl BenchResult {
    fn from_samples(name: String, mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let pct = |q: f64| ms[((ms.len() - 1) as f64 * q).round() as usize];
        BenchResult {
            name,
            iterations: ms.len(),
            p50: pct(0.5),
            p90: pct(0.9),
            p99: pct(0.99),
            mean: ms.iter().sum::<f64>() / ms.len() as f64,
        }
    }
}

fn time<F: FnMut(usize) -> Result<()>>(name: String, warmup: usize, iters: usize, mut f: F) -> Result<BenchResult> {
    if iters == 0 {
        return Err(Error::contract("benchmark needs at least one iteration"));
    }
    for i in 0..warmup {
        f(i)?;
    }
    let mut ms = Vec::with_capacity(iters);
    for i in 0..iters {
        let t = Instant::now();
        f(warmup + i)?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchResult::from_samples(name, ms))
}

/// A 12 m square room with a ring of pillars.
pub fn bench_world() -> FloorplanWorld {
    let n = 48;
    let mut text = String::from("cellsize 0.25\nheight 2.5\nceiling 0\n");
    for r in 0..n {
        for c in 0..n {
            let border = r == 0 || c == 0 || r == n - 1 || c == n - 1;
            let pillar = r % 12 == 5 && c % 12 == 5 && (r, c) != (17, 17) && (r, c) != (29, 29);
            text.push(if border || pillar { '#' } else { '.' });
        }
        text.push('\n');
    }
    FloorplanWorld::parse("bench", &text).expect("bench world is valid")
}

/// Base pose `k` on a circle around the room centre, facing along the circle.
fn orbit_pose(k: usize) -> Pose {
    let a = k as f64 * 0.1;
    Pose::planar(6.0 + 1.2 * a.cos(), 6.0 + 1.2 * a.sin(), a + std::f64::consts::FRAC_PI_2)
}

pub fn run_suite(suite: Suite, iters: usize) -> Result<Vec<BenchResult>> {
    match suite {
        Suite::Raycast => Ok(vec![raycast(64, iters)?]),
        Suite::Pipeline => Ok(vec![pipeline(256, iters)?, pipeline(1024, iters)?]),
        Suite::Encoder => [256, 1024]
            .into_iter()
            .map(|n| encoder(n, iters))
            .collect(),
    }
}

pub fn raycast(size: usize, iters: usize) -> Result<BenchResult> {
    let world = bench_world();
    let cam = CameraConfig {
        width: size,
        height: size,
        ..CameraConfig::default()
    };
    let model = cam.model(&cam.mount)?;
    time(format!("raycast {size}x{size}"), 5, iters, |k| {
        let cw = compose(&orbit_pose(k), &model.extrinsic)?;
        render_depth(&world, &cw, &model).map(drop)
    })
}

/// Render, project, integrate with the keyframe buffer, crop and downsample
/// to `points`. The buffer is full before timing starts.
pub fn pipeline(points: usize, iters: usize) -> Result<BenchResult> {
    let world = bench_world();
    let cam = CameraConfig::default();
    let model = cam.model(&cam.mount)?;
    let ds = DownsampleConfig {
        target_points: points,
        ..DownsampleConfig::default()
    };
    let mut buf = KeyframeBuffer::new(8);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    time(format!("pipeline {points} points"), buf.capacity() + 2, iters, |k| {
        let base = orbit_pose(k);
        let depth = render_depth(&world, &compose(&base, &model.extrinsic)?, &model)?;
        buf.push(to_base_frame(&depth, &model)?, base.clone())?;
        let merged = integrate(&buf, &base)?;
        let vox = voxel_downsample(&crop(&merged, ds.crop_half_extent), ds.voxel_size)?;
        random_downsample(&vox, ds.target_points, &mut rng).map(drop)
    })
}

/// One recurrent policy step (PointNet encoder, batch of one) in `f32`.
pub fn encoder(points: usize, iters: usize) -> Result<BenchResult> {
    let spec = ObservationSpec {
        target_points: points,
        image: (64, 64),
        point_scale: DownsampleConfig::default().crop_half_extent,
        max_depth: 10.0,
    };
    let cfg = PolicyConfig {
        encoder: EncoderConfig {
            variant: EncoderVariant::Pointnet,
            ..EncoderConfig::default()
        },
        hidden: 128,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let policy = ActorCritic::new(&mut store, &cfg, spec, &mut rng)?;
    let cloud: Vec<_> = (0..points)
        .map(|i| {
            let a = i as f64 * 0.37;
            crate::geom::Vec3::new(a.cos() * 3.0, a.sin() * 3.0, (i % 7) as f64 * 0.2)
        })
        .collect();
    let obs = policy.prepare(&cloud, None)?;
    let h = Tensor::zeros(1, policy.hidden());
    time(format!("pointnet policy step {points} points"), 3, iters, |_| {
        let input = PolicyInput {
            obs: &obs,
            goal: [1.0, 1.0, 0.0],
            prev_action: None,
            episode_start: true,
        };
        policy.step(&store, &[input], &h).map(drop)
    })
}
