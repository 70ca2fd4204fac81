use std::cmp::Ordering;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{Conv2d, Init, Linear};
use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geom::{DepthImage, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    #[serde(alias = "pointnet-style")]
    Pointnet,
    Multiscale,
    DepthBaseline,
}

impl EncoderVariant {
    pub fn uses_depth(self) -> bool {
        self == EncoderVariant::DepthBaseline
    }

    pub fn name(self) -> &'static str {
        match self {
            EncoderVariant::Pointnet => "pointnet",
            EncoderVariant::Multiscale => "multiscale",
            EncoderVariant::DepthBaseline => "depth-baseline",
        }
    }
}

impl std::str::FromStr for EncoderVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pointnet" => Ok(EncoderVariant::Pointnet),
            "multiscale" => Ok(EncoderVariant::Multiscale),
            "depth-baseline" => Ok(EncoderVariant::DepthBaseline),
            other => Err(format!(
                "unknown encoder {other:?} (expected pointnet, multiscale or depth-baseline)"
            )),
        }
    }
}

/// One level of the multi-scale encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelConfig {
    /// Representative points `N_i`.
    pub points: usize,
    /// Neighbours per representative.
    pub k: usize,
    /// Local feature width `f_i`.
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    /// Shared per-point layer widths.
    pub point_widths: Vec<usize>,
    pub levels: Vec<LevelConfig>,
    /// Output channels of the three convolutions (8×8/4, 4×4/2, 3×3/1).
    pub conv_channels: [usize; 3],
    /// Width of the fully connected layer after the convolutions.
    pub depth_fc: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            variant: EncoderVariant::Pointnet,
            point_widths: vec![64, 128, 256],
            levels: vec![
                LevelConfig { points: 128, k: 8, width: 64 },
                LevelConfig { points: 32, k: 8, width: 128 },
                LevelConfig { points: 8, k: 8, width: 256 },
            ],
            conv_channels: [32, 64, 32],
            depth_fc: 256,
        }
    }
}

pub const CONV_SHAPES: [(usize, usize); 3] = [(8, 4), (4, 2), (3, 1)];

impl EncoderConfig {
    /// Checks the configuration against the observation sizes it will see.
    pub fn validate(&self, target_points: usize, image: (usize, usize)) -> Result<()> {
        match self.variant {
            EncoderVariant::Pointnet => {
                if self.point_widths.is_empty() || self.point_widths.contains(&0) {
                    return Err(Error::Config("point_widths must be nonempty and positive".into()));
                }
            }
            EncoderVariant::Multiscale => {
                if self.levels.is_empty() {
                    return Err(Error::Config("multiscale encoder needs at least one level".into()));
                }
                let mut prev = target_points;
                for (i, l) in self.levels.iter().enumerate() {
                    if l.points == 0 || l.points > prev || l.k == 0 || l.k > prev || l.width == 0 {
                        return Err(Error::Config(format!(
                            "level {i}: need 1 ≤ points ≤ {prev}, 1 ≤ k ≤ {prev}, width ≥ 1; got {l:?}"
                        )));
                    }
                    prev = l.points;
                }
            }
            EncoderVariant::DepthBaseline => {
                if self.conv_channels.contains(&0) || self.depth_fc == 0 {
                    return Err(Error::Config("conv channels and depth_fc must be positive".into()));
                }
                let (mut h, mut w) = (image.1, image.0);
                for (k, s) in CONV_SHAPES {
                    if h < k || w < k {
                        return Err(Error::Config(format!(
                            "image {}x{} too small for the convolution stack",
                            image.0, image.1
                        )));
                    }
                    h = (h - k) / s + 1;
                    w = (w - k) / s + 1;
                }
            }
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        match self.variant {
            EncoderVariant::Pointnet => *self.point_widths.last().unwrap(),
            EncoderVariant::Multiscale => self.levels.iter().map(|l| l.width).sum(),
            EncoderVariant::DepthBaseline => self.depth_fc,
        }
    }
}

/// Precomputed grouping for one multi-scale level of one cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPlan {
    /// Row of the previous level for each (representative, neighbour) pair.
    pub neighbors: Vec<u32>,
    /// Neighbour coordinates relative to their representative, `N_i·k × 3`.
    pub centered: Vec<f32>,
    /// Representative coordinates, `N_i × 3`.
    pub reps: Vec<f32>,
}

/// Encoder input for one observation, independent of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Prepared {
    /// `N × 3` coordinates, row-major.
    Points(Vec<f32>),
    MultiScale(Arc<Vec<LevelPlan>>),
    /// Normalised depth, row-major `H × W`.
    Depth(Vec<f32>),
}

/// Coordinates scaled by `1 / scale` (e.g. the crop half-extent).
pub fn prepare_points(points: &[Vec3], scale: f64) -> Vec<f32> {
    points
        .iter()
        .flat_map(|p| [(p.x / scale) as f32, (p.y / scale) as f32, (p.z / scale) as f32])
        .collect()
}

pub fn prepare_depth(depth: &DepthImage, max_depth: f64) -> Vec<f32> {
    depth.data.iter().map(|d| (d / max_depth) as f32).collect()
}

fn lex(a: &[f32], b: &[f32]) -> Ordering {
    a[0].total_cmp(&b[0])
        .then(a[1].total_cmp(&b[1]))
        .then(a[2].total_cmp(&b[2]))
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Farthest-point sampling seeded at the lexicographically smallest point.
/// Distance ties resolve to the lexicographically smaller point, so the
/// selected coordinates do not depend on input order.
pub fn farthest_point_sampling(points: &[f32], count: usize) -> Vec<usize> {
    let n = points.len() / 3;
    let p = |i: usize| &points[3 * i..3 * i + 3];
    let mut first = 0;
    for i in 1..n {
        if lex(p(i), p(first)) == Ordering::Less {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut min_d: Vec<f32> = (0..n).map(|i| dist2(p(i), p(first))).collect();
    while chosen.len() < count.min(n) {
        let mut best = 0;
        for i in 1..n {
            let ord = min_d[i]
                .total_cmp(&min_d[best])
                .then_with(|| lex(p(best), p(i)));
            if ord == Ordering::Greater {
                best = i;
            }
        }
        chosen.push(best);
        for i in 0..n {
            min_d[i] = min_d[i].min(dist2(p(i), p(best)));
        }
    }
    chosen
}

/// Indices of the `k` nearest points to `q`, ordered by distance then
/// coordinates.
pub fn knn(points: &[f32], q: &[f32], k: usize) -> Vec<usize> {
    let n = points.len() / 3;
    let p = |i: usize| &points[3 * i..3 * i + 3];
    let mut idx: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| {
        dist2(p(*a), q)
            .total_cmp(&dist2(p(*b), q))
            .then_with(|| lex(p(*a), p(*b)))
    };
    if k < n {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx
}

/// Builds every level's grouping for one cloud given as `N × 3`.
pub fn plan_multiscale(points: &[f32], levels: &[LevelConfig]) -> Result<Vec<LevelPlan>> {
    let mut prev = points.to_vec();
    let mut out = Vec::with_capacity(levels.len());
    for (i, l) in levels.iter().enumerate() {
        let n = prev.len() / 3;
        if n < l.points || n < l.k {
            return Err(Error::contract(format!(
                "level {i} needs {} points and k = {} but has {n}",
                l.points, l.k
            )));
        }
        let reps = farthest_point_sampling(&prev, l.points);
        let mut neighbors = Vec::with_capacity(l.points * l.k);
        let mut centered = Vec::with_capacity(l.points * l.k * 3);
        let mut rep_coords = Vec::with_capacity(l.points * 3);
        for &r in &reps {
            let q = &prev[3 * r..3 * r + 3];
            rep_coords.extend_from_slice(q);
            for j in knn(&prev, q, l.k) {
                neighbors.push(j as u32);
                for d in 0..3 {
                    centered.push(prev[3 * j + d] - q[d]);
                }
            }
        }
        prev = rep_coords.clone();
        out.push(LevelPlan {
            neighbors,
            centered,
            reps: rep_coords,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct MsLevel {
    local: Linear,
    point: Linear,
    cfg: LevelConfig,
}

#[derive(Clone, Debug)]
enum Body {
    Pointnet(Vec<Linear>),
    Multiscale(Vec<MsLevel>),
    Depth { convs: Vec<Conv2d>, fc: Linear },
}

/// Observation encoder producing one feature row per sample.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub target_points: usize,
    pub image: (usize, usize),
    body: Body,
}

fn to_tensor<T: Real>(rows: usize, cols: usize, data: impl Iterator<Item = f32>) -> Tensor<T> {
    Tensor::from_vec(rows, cols, data.map(T::from_f32).collect())
}

impl Encoder {
    /// `image` is `(width, height)` of depth observations.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &EncoderConfig,
        target_points: usize,
        image: (usize, usize),
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(target_points, image)?;
        let body = match config.variant {
            EncoderVariant::Pointnet => {
                let mut layers = Vec::new();
                let mut fan_in = 3;
                for (i, &w) in config.point_widths.iter().enumerate() {
                    layers.push(Linear::new(store, &format!("enc.fc{i}"), fan_in, w, Init::KaimingUniform, 1.0, rng));
                    fan_in = w;
                }
                Body::Pointnet(layers)
            }
            EncoderVariant::Multiscale => {
                let mut levels = Vec::new();
                let mut prev_width = 0;
                for (i, &cfg) in config.levels.iter().enumerate() {
                    let local = Linear::new(store, &format!("enc.l{i}.local"), 3 + prev_width, cfg.width, Init::KaimingUniform, 1.0, rng);
                    let point = Linear::new(store, &format!("enc.l{i}.point"), cfg.width + 3, cfg.width, Init::KaimingUniform, 1.0, rng);
                    levels.push(MsLevel { local, point, cfg });
                    prev_width = cfg.width;
                }
                Body::Multiscale(levels)
            }
            EncoderVariant::DepthBaseline => {
                let mut convs = Vec::new();
                let mut shape = (image.1, image.0, 1);
                for (i, ((k, s), &c)) in CONV_SHAPES.iter().zip(&config.conv_channels).enumerate() {
                    let conv = Conv2d::new(store, &format!("enc.conv{i}"), shape, *k, *s, c, rng);
                    let (oh, ow) = conv.out_hw();
                    shape = (oh, ow, c);
                    convs.push(conv);
                }
                let flat = shape.0 * shape.1 * shape.2;
                let fc = Linear::new(store, "enc.fc", flat, config.depth_fc, Init::Orthogonal, 2f64.sqrt(), rng);
                Body::Depth { convs, fc }
            }
        };
        Ok(Encoder {
            config: config.clone(),
            target_points,
            image,
            body,
        })
    }

    pub fn output_width(&self) -> usize {
        self.config.output_width()
    }

    /// Converts a point cloud (already scaled) into this encoder's input.
    pub fn prepare_cloud(&self, scaled: Vec<f32>) -> Result<Prepared> {
        if scaled.len() != 3 * self.target_points {
            return Err(Error::contract(format!(
                "encoder expects {} points, got {}",
                self.target_points,
                scaled.len() / 3
            )));
        }
        match self.config.variant {
            EncoderVariant::Pointnet => Ok(Prepared::Points(scaled)),
            EncoderVariant::Multiscale => Ok(Prepared::MultiScale(Arc::new(plan_multiscale(
                &scaled,
                &self.config.levels,
            )?))),
            EncoderVariant::DepthBaseline => Err(Error::contract("depth encoder cannot take a cloud")),
        }
    }

    pub fn prepare_depth_image(&self, normalized: Vec<f32>) -> Result<Prepared> {
        if self.config.variant != EncoderVariant::DepthBaseline {
            return Err(Error::contract("point encoder cannot take a depth image"));
        }
        if normalized.len() != self.image.0 * self.image.1 {
            return Err(Error::contract(format!(
                "depth encoder expects {}x{} pixels, got {}",
                self.image.0,
                self.image.1,
                normalized.len()
            )));
        }
        Ok(Prepared::Depth(normalized))
    }

    /// Encodes a batch; returns `B × output_width`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, inputs: &[&Prepared]) -> Result<Var> {
        let b = inputs.len();
        match &self.body {
            Body::Pointnet(layers) => {
                let n = self.target_points;
                let mut data = Vec::with_capacity(b * n * 3);
                for inp in inputs {
                    match inp {
                        Prepared::Points(p) if p.len() == n * 3 => data.extend(p.iter().map(|v| T::from_f32(*v))),
                        _ => return Err(Error::contract("pointnet input must be target_points × 3")),
                    }
                }
                let mut h = g.constant(Tensor::from_vec(b * n, 3, data));
                for l in layers {
                    let z = l.forward(g, store, h);
                    h = g.relu(z);
                }
                Ok(g.max_pool_rows(h, n))
            }
            Body::Multiscale(levels) => {
                let plans = inputs
                    .iter()
                    .map(|inp| match inp {
                        Prepared::MultiScale(p) if p.len() == levels.len() => Ok(p.as_ref()),
                        _ => Err(Error::contract("multiscale input must carry one plan per level")),
                    })
                    .collect::<Result<Vec<_>>>()?;
                let mut prev: Option<Var> = None;
                let mut prev_n = self.target_points;
                let mut pooled = Vec::with_capacity(levels.len());
                for (li, lvl) in levels.iter().enumerate() {
                    let (ni, k) = (lvl.cfg.points, lvl.cfg.k);
                    let centered = g.constant(to_tensor(
                        b * ni * k,
                        3,
                        plans.iter().flat_map(|p| p[li].centered.iter().copied()),
                    ));
                    let input = match prev {
                        None => centered,
                        Some(f) => {
                            let rows: Vec<u32> = plans
                                .iter()
                                .enumerate()
                                .flat_map(|(s, p)| p[li].neighbors.iter().map(move |&j| j + (s * prev_n) as u32))
                                .collect();
                            let feats = g.gather_rows(f, &rows);
                            g.concat_cols(&[centered, feats])
                        }
                    };
                    let z = lvl.local.forward(g, store, input);
                    let a = g.relu(z);
                    let floc = g.max_pool_rows(a, k);
                    let reps = g.constant(to_tensor(b * ni, 3, plans.iter().flat_map(|p| p[li].reps.iter().copied())));
                    let with_xyz = g.concat_cols(&[floc, reps]);
                    let z = lvl.point.forward(g, store, with_xyz);
                    let a = g.relu(z);
                    pooled.push(g.max_pool_rows(a, ni));
                    prev = Some(floc);
                    prev_n = ni;
                }
                Ok(g.concat_cols(&pooled))
            }
            Body::Depth { convs, fc } => {
                let pixels = self.image.0 * self.image.1;
                let mut data = Vec::with_capacity(b * pixels);
                for inp in inputs {
                    match inp {
                        Prepared::Depth(d) if d.len() == pixels => data.extend(d.iter().map(|v| T::from_f32(*v))),
                        _ => return Err(Error::contract("depth input resolution mismatch")),
                    }
                }
                let mut h = g.constant(Tensor::from_vec(b, pixels, data));
                for c in convs {
                    let z = c.forward(g, store, h);
                    h = g.relu(z);
                }
                let z = fc.forward(g, store, h);
                Ok(g.relu(z))
            }
        }
    }
}
