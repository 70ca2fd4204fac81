use rand::Rng;
use serde::{Deserialize, Serialize};

use super::encoders::{prepare_depth, prepare_points, Encoder, EncoderConfig, Prepared};
use super::graph::{Graph, Var};
use super::layers::{Gru, Init, Linear};
use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::geom::{DepthImage, Vec3};

pub const NUM_ACTIONS: usize = 4;
/// `(rho, cos φ, sin φ)`.
pub const GOAL_DIM: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    /// Recurrent state width.
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            encoder: EncoderConfig::default(),
            hidden: 128,
        }
    }
}

/// Observation sizes and scales the network is built for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    pub target_points: usize,
    /// Depth image `(width, height)`.
    pub image: (usize, usize),
    /// Point coordinates are divided by this (the crop half-extent).
    pub point_scale: f64,
    /// Depth values are divided by this.
    pub max_depth: f64,
}

/// One time step of one worker.
#[derive(Clone, Copy, Debug)]
pub struct PolicyInput<'a> {
    pub obs: &'a Prepared,
    pub goal: [f32; GOAL_DIM],
    pub prev_action: Option<usize>,
    /// First step of an episode: the recurrent state is reset before it.
    pub episode_start: bool,
}

pub struct SequenceOutput {
    /// `T·B × 4`, rows in (time, worker) order.
    pub logits: Var,
    /// `T·B × 1`.
    pub values: Var,
    /// `B × H` after the last step.
    pub hidden: Var,
}

/// Result of a single-step forward pass.
#[derive(Clone, Debug)]
pub struct PolicyOutput<T> {
    pub logits: Vec<[f64; NUM_ACTIONS]>,
    pub values: Vec<f64>,
    pub hidden: Tensor<T>,
}

/// Encoder, single-layer GRU and linear actor/critic heads.
#[derive(Clone, Debug)]
pub struct ActorCritic {
    pub config: PolicyConfig,
    pub spec: ObservationSpec,
    pub encoder: Encoder,
    pub gru: Gru,
    pub actor: Linear,
    pub critic: Linear,
}

impl ActorCritic {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        config: &PolicyConfig,
        spec: ObservationSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if config.hidden == 0 {
            return Err(Error::Config("policy hidden width must be positive".into()));
        }
        let encoder = Encoder::new(store, &config.encoder, spec.target_points, spec.image, rng)?;
        let input = encoder.output_width() + GOAL_DIM + NUM_ACTIONS;
        let gru = Gru::new(store, "gru", input, config.hidden, rng);
        let actor = Linear::new(store, "actor", config.hidden, NUM_ACTIONS, Init::Orthogonal, 0.01, rng);
        let critic = Linear::new(store, "critic", config.hidden, 1, Init::Orthogonal, 1.0, rng);
        Ok(ActorCritic {
            config: config.clone(),
            spec,
            encoder,
            gru,
            actor,
            critic,
        })
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden
    }

    pub fn uses_depth(&self) -> bool {
        self.config.encoder.variant.uses_depth()
    }

    /// Encoder input for one observation.
    pub fn prepare(&self, points: &[Vec3], depth: Option<&DepthImage>) -> Result<Prepared> {
        if self.uses_depth() {
            let d = depth.ok_or_else(|| Error::contract("depth encoder needs a depth image"))?;
            self.encoder.prepare_depth_image(prepare_depth(d, self.spec.max_depth))
        } else {
            self.encoder.prepare_cloud(prepare_points(points, self.spec.point_scale))
        }
    }

    /// Unrolls `t` steps for `b` workers from `h0` (`B × H`).
    pub fn forward_sequence<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        inputs: &[PolicyInput<'_>],
        t: usize,
        b: usize,
        h0: Var,
    ) -> Result<SequenceOutput> {
        if inputs.len() != t * b || t == 0 || b == 0 {
            return Err(Error::contract(format!("expected {t}×{b} inputs, got {}", inputs.len())));
        }
        let hdim = self.hidden();
        if g.shape(h0) != (b, hdim) {
            return Err(Error::contract("initial recurrent state has the wrong shape"));
        }
        let obs: Vec<&Prepared> = inputs.iter().map(|i| i.obs).collect();
        let feat = self.encoder.forward(g, store, &obs)?;
        let mut extra = Vec::with_capacity(inputs.len() * (GOAL_DIM + NUM_ACTIONS));
        for i in inputs {
            extra.extend(i.goal.iter().map(|v| T::from_f32(*v)));
            for a in 0..NUM_ACTIONS {
                extra.push(if i.prev_action == Some(a) { T::one() } else { T::zero() });
            }
        }
        let extra = g.constant(Tensor::from_vec(inputs.len(), GOAL_DIM + NUM_ACTIONS, extra));
        let x = g.concat_cols(&[feat, extra]);
        let xp = self.gru.project_input(g, store, x);
        let mut h = h0;
        let mut states = Vec::with_capacity(t);
        for step in 0..t {
            let row = &inputs[step * b..(step + 1) * b];
            if row.iter().any(|i| i.episode_start) {
                let mask = row
                    .iter()
                    .flat_map(|i| std::iter::repeat_n(if i.episode_start { T::zero() } else { T::one() }, hdim))
                    .collect();
                let m = g.constant(Tensor::from_vec(b, hdim, mask));
                h = g.mul(h, m);
            }
            let xt = g.slice_rows(xp, step * b, b);
            h = self.gru.step(g, store, xt, h);
            states.push(h);
        }
        let all = if states.len() == 1 { states[0] } else { g.concat_rows(&states) };
        let logits = self.actor.forward(g, store, all);
        let values = self.critic.forward(g, store, all);
        Ok(SequenceOutput {
            logits,
            values,
            hidden: h,
        })
    }

    /// One step for a batch of workers without recording gradients for later use.
    pub fn step<T: Real>(
        &self,
        store: &ParamStore<T>,
        inputs: &[PolicyInput<'_>],
        hidden: &Tensor<T>,
    ) -> Result<PolicyOutput<T>> {
        let mut g = Graph::new();
        let h0 = g.constant(hidden.clone());
        let out = self.forward_sequence(&mut g, store, inputs, 1, inputs.len(), h0)?;
        let l = g.value(out.logits);
        let logits = (0..l.rows)
            .map(|r| std::array::from_fn(|a| l.get(r, a).as_f64()))
            .collect();
        Ok(PolicyOutput {
            logits,
            values: g.value(out.values).to_f64_vec(),
            hidden: g.value(out.hidden).clone(),
        })
    }
}

pub fn goal_features(rho: f64, phi: f64) -> [f32; GOAL_DIM] {
    [rho as f32, phi.cos() as f32, phi.sin() as f32]
}

pub fn softmax(logits: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        let k = logits.iter().position(|l| *l == m).unwrap();
        return std::array::from_fn(|i| if i == k { 1.0 } else { 0.0 });
    }
    let e: [f64; NUM_ACTIONS] = std::array::from_fn(|i| (logits[i] - m).exp());
    let s: f64 = e.iter().sum();
    std::array::from_fn(|i| e[i] / s)
}

pub fn log_softmax(logits: &[f64; NUM_ACTIONS]) -> [f64; NUM_ACTIONS] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return softmax(logits).map(f64::ln);
    }
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    std::array::from_fn(|i| logits[i] - lse)
}

/// Draws an action index from the categorical distribution over `logits`.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64; NUM_ACTIONS], rng: &mut R) -> usize {
    let p = softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter()
        .enumerate()
        .rev()
        .find(|(_, v)| **v > 0.0)
        .map_or(NUM_ACTIONS - 1, |(i, _)| i)
}

pub fn greedy_action(logits: &[f64; NUM_ACTIONS]) -> usize {
    let mut best = 0;
    for i in 1..NUM_ACTIONS {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::encoders::EncoderVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(variant: EncoderVariant) -> (ActorCritic, ParamStore<f64>) {
        let cfg = PolicyConfig {
            encoder: EncoderConfig {
                variant,
                point_widths: vec![8, 8, 16],
                ..Default::default()
            },
            hidden: 12,
        };
        let spec = ObservationSpec {
            target_points: 16,
            image: (16, 16),
            point_scale: 5.0,
            max_depth: 10.0,
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ActorCritic::new(&mut store, &cfg, spec, &mut rng).unwrap();
        (p, store)
    }

    #[test]
    fn stepwise_equals_sequence() {
        let (p, store) = small(EncoderVariant::Pointnet);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs: Vec<Prepared> = (0..6)
            .map(|_| Prepared::Points((0..48).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
            .collect();
        // 3 steps × 2 workers; worker 1 restarts at step 2.
        let inputs: Vec<PolicyInput> = (0..6)
            .map(|i| PolicyInput {
                obs: &obs[i],
                goal: goal_features(1.0 + i as f64, 0.3 * i as f64),
                prev_action: if i < 2 { None } else { Some(i % 4) },
                episode_start: i < 2 || i == 5,
            })
            .collect();
        let mut g = Graph::new();
        let h0 = g.constant(Tensor::zeros(2, 12));
        let seq = p.forward_sequence(&mut g, &store, &inputs, 3, 2, h0).unwrap();
        let mut h = Tensor::zeros(2, 12);
        for t in 0..3 {
            let out = p.step(&store, &inputs[2 * t..2 * t + 2], &h).unwrap();
            for w in 0..2 {
                for a in 0..4 {
                    assert!((out.logits[w][a] - g.value(seq.logits).get(2 * t + w, a)).abs() < 1e-12);
                }
                assert!((out.values[w] - g.value(seq.values).get(2 * t + w, 0)).abs() < 1e-12);
            }
            h = out.hidden;
        }
        assert_eq!(&h, g.value(seq.hidden));
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1.0, -3.0, 50.0, 0.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn forced_logit_always_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sample_action(&[0.0, 0.0, 0.0, f64::INFINITY], &mut rng), 3);
            assert_eq!(sample_action(&[0.0, 0.0, 1e4, 0.0], &mut rng), 2);
        }
    }
}
