use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::env::{NavEnv, Observation};
use crate::error::Result;
use crate::geom::wrap_angle;
use crate::nn::{goal_features, greedy_action, sample_action, ActorCritic, ParamStore, PolicyInput, Real, Tensor};
use crate::sim::{Action, DistanceField, InflatedGrid};

/// Anything that picks actions in a [`NavEnv`].
pub trait Agent {
    /// Called before every episode with a seed unique to that episode.
    fn begin_episode(&mut self, seed: u64);

    fn act(&mut self, env: &NavEnv, obs: &Observation) -> Result<Action>;
}

/// Uniformly random actions.
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn begin_episode(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, _env: &NavEnv, _obs: &Observation) -> Result<Action> {
        Ok(Action::from_index(self.rng.random_range(0..Action::COUNT)))
    }
}

/// Privileged scripted agent: follows a Dijkstra path planned with extra
/// wall margin, steering towards the farthest waypoint in view.
pub struct OracleAgent {
    /// Clearance added to the footprint when planning, meters.
    pub margin: f64,
    /// Heading error tolerated before turning, radians.
    pub turn_tolerance: f64,
    /// Waypoints considered for line-of-sight shortcuts.
    pub lookahead: usize,
    plan: Option<(u64, Option<DistanceField>)>,
}

impl Default for OracleAgent {
    fn default() -> Self {
        OracleAgent {
            margin: 0.1,
            turn_tolerance: 5f64.to_radians(),
            lookahead: 6,
            plan: None,
        }
    }
}

impl OracleAgent {
    fn waypoints(&mut self, env: &NavEnv) -> Result<Vec<(f64, f64)>> {
        let st = env.state().expect("active episode");
        if self.plan.as_ref().is_none_or(|(id, _)| *id != st.id) {
            let world = env.world(st.world);
            let grid = Arc::new(InflatedGrid::new(world, st.agent.footprint_radius + self.margin));
            let field = grid.distance_field(st.episode.goal.0, st.episode.goal.1).ok();
            self.plan = Some((st.id, field));
        }
        let (x, y) = (st.agent.x, st.agent.y);
        let margin_path = self.plan.as_ref().and_then(|(_, f)| f.as_ref()).and_then(|f| f.path_from(x, y).ok());
        let mut path = match margin_path {
            Some(p) => p,
            None => st.episode.field.path_from(x, y)?,
        };
        path.push(st.episode.goal);
        Ok(path)
    }
}

impl Agent for OracleAgent {
    fn begin_episode(&mut self, _seed: u64) {}

    fn act(&mut self, env: &NavEnv, _obs: &Observation) -> Result<Action> {
        let st = env.state().expect("active episode");
        if st.geodesic < env.config.reward.success_distance {
            return Ok(Action::Stop);
        }
        let (x, y, r) = (st.agent.x, st.agent.y, st.agent.footprint_radius);
        let heading = st.agent.heading;
        let world = Arc::clone(env.world(st.world));
        let path = self.waypoints(env)?;
        let clear = |tx: f64, ty: f64| {
            let n = ((tx - x).hypot(ty - y) / 0.05).ceil().max(1.0) as usize;
            (0..=n).all(|i| {
                let s = i as f64 / n as f64;
                world.disk_is_free(x + s * (tx - x), y + s * (ty - y), r + 0.02)
            })
        };
        let mut target = path[0];
        for &w in path.iter().take(self.lookahead).skip(1) {
            if clear(w.0, w.1) {
                target = w;
            }
        }
        if (target.0 - x).hypot(target.1 - y) < 1e-6 {
            target = path.get(1).copied().unwrap_or(target);
        }
        let err = wrap_angle((target.1 - y).atan2(target.0 - x) - heading);
        Ok(if err > self.turn_tolerance {
            Action::TurnLeft
        } else if err < -self.turn_tolerance {
            Action::TurnRight
        } else {
            Action::Forward
        })
    }
}

/// A trained policy run step by step with its recurrent state.
pub struct LearnedAgent<T> {
    pub policy: ActorCritic,
    pub store: ParamStore<T>,
    /// Take the most likely action instead of sampling.
    pub greedy: bool,
    hidden: Tensor<T>,
    prev: Option<usize>,
    start: bool,
    rng: ChaCha8Rng,
}

impl<T: Real> LearnedAgent<T> {
    pub fn new(policy: ActorCritic, store: ParamStore<T>, greedy: bool) -> Self {
        let h = policy.hidden();
        LearnedAgent {
            policy,
            store,
            greedy,
            hidden: Tensor::zeros(1, h),
            prev: None,
            start: true,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl<T: Real> Agent for LearnedAgent<T> {
    fn begin_episode(&mut self, seed: u64) {
        self.hidden = Tensor::zeros(1, self.policy.hidden());
        self.prev = None;
        self.start = true;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, _env: &NavEnv, obs: &Observation) -> Result<Action> {
        let prepared = self.policy.prepare(&obs.cloud.points, obs.depth.as_ref())?;
        let input = PolicyInput {
            obs: &prepared,
            goal: goal_features(obs.goal.rho, obs.goal.phi),
            prev_action: self.prev,
            episode_start: self.start,
        };
        let out = self.policy.step(&self.store, &[input], &self.hidden)?;
        self.hidden = out.hidden;
        self.start = false;
        let a = if self.greedy {
            greedy_action(&out.logits[0])
        } else {
            sample_action(&out.logits[0], &mut self.rng)
        };
        self.prev = Some(a);
        Ok(Action::from_index(a))
    }
}
