use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{goal_features, log_softmax, sample_action, ActorCritic, ParamStore, PolicyInput, Prepared, Real, Tensor, GOAL_DIM};
use crate::sim::Action;
use crate::task::{EpisodeResult, NavEnv, Observation};

struct Worker {
    env: NavEnv,
    obs: Prepared,
    goal: [f32; GOAL_DIM],
    prev: Option<usize>,
    start: bool,
    rng: ChaCha8Rng,
}

/// Environments stepped in lockstep by one policy, with their recurrent state.
pub struct WorkerPool<T> {
    workers: Vec<Worker>,
    /// `B × H`.
    hidden: Tensor<T>,
}

fn prepare(policy: &ActorCritic, obs: &Observation) -> Result<(Prepared, [f32; GOAL_DIM])> {
    Ok((
        policy.prepare(&obs.cloud.points, obs.depth.as_ref())?,
        goal_features(obs.goal.rho, obs.goal.phi),
    ))
}

impl<T: Real> WorkerPool<T> {
    /// `envs[i]` is paired with action-sampling stream `rngs[i]`; every env is reset.
    pub fn new(policy: &ActorCritic, envs: Vec<NavEnv>, rngs: Vec<ChaCha8Rng>) -> Result<Self> {
        if envs.is_empty() || envs.len() != rngs.len() {
            return Err(Error::contract("worker pool needs one rng per environment"));
        }
        let n = envs.len();
        let workers = envs
            .into_iter()
            .zip(rngs)
            .enumerate()
            .map(|(i, (mut env, rng))| {
                let wrap = |e| Error::Worker { worker: i, source: Box::new(e) };
                let obs = env.reset().map_err(wrap)?;
                let (obs, goal) = prepare(policy, &obs).map_err(wrap)?;
                Ok(Worker {
                    env,
                    obs,
                    goal,
                    prev: None,
                    start: true,
                    rng,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WorkerPool {
            workers,
            hidden: Tensor::zeros(n, policy.hidden()),
        })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }

    fn inputs(&self) -> Vec<PolicyInput<'_>> {
        self.workers
            .iter()
            .map(|w| PolicyInput {
                obs: &w.obs,
                goal: w.goal,
                prev_action: w.prev,
                episode_start: w.start,
            })
            .collect()
    }
}

/// Transitions of one rollout, indexed `t·B + b`.
#[derive(Clone, Debug)]
pub struct RolloutBatch<T> {
    pub steps: usize,
    pub workers: usize,
    pub obs: Vec<Prepared>,
    pub goals: Vec<[f32; GOAL_DIM]>,
    pub prev_actions: Vec<Option<usize>>,
    pub starts: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Recurrent state at the start of the segment, `B × H`.
    pub h0: Tensor<T>,
    /// Value estimate after the last step, per worker.
    pub bootstrap: Vec<f64>,
    /// Episodes that finished during the rollout.
    pub episodes: Vec<EpisodeResult>,
}

impl<T: Real> RolloutBatch<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn input(&self, i: usize) -> PolicyInput<'_> {
        PolicyInput {
            obs: &self.obs[i],
            goal: self.goals[i],
            prev_action: self.prev_actions[i],
            episode_start: self.starts[i],
        }
    }
}

/// Steps every worker `length` times with actions sampled from the policy.
/// Finished episodes reset in place; the next step starts from a zeroed
/// recurrent state.
pub fn collect_rollouts<T: Real>(
    policy: &ActorCritic,
    store: &ParamStore<T>,
    pool: &mut WorkerPool<T>,
    length: usize,
) -> Result<RolloutBatch<T>> {
    let b = pool.len();
    let n = length * b;
    let mut batch = RolloutBatch {
        steps: length,
        workers: b,
        obs: Vec::with_capacity(n),
        goals: Vec::with_capacity(n),
        prev_actions: Vec::with_capacity(n),
        starts: Vec::with_capacity(n),
        actions: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        h0: pool.hidden.clone(),
        bootstrap: Vec::new(),
        episodes: Vec::new(),
    };
    for _ in 0..length {
        let out = policy.step(store, &pool.inputs(), &pool.hidden)?;
        pool.hidden = out.hidden;
        let mut actions = Vec::with_capacity(b);
        for (w, logits) in pool.workers.iter_mut().zip(&out.logits) {
            let a = sample_action(logits, &mut w.rng);
            batch.log_probs.push(log_softmax(logits)[a]);
            batch.goals.push(w.goal);
            batch.prev_actions.push(w.prev);
            batch.starts.push(w.start);
            actions.push(a);
        }
        batch.actions.extend(&actions);
        batch.values.extend(&out.values);
        let stepped: Vec<Result<(f64, bool, Option<EpisodeResult>, Prepared)>> = pool
            .workers
            .par_iter_mut()
            .zip(&actions)
            .enumerate()
            .map(|(i, (w, &a))| {
                let wrap = |e| Error::Worker { worker: i, source: Box::new(e) };
                let res = w.env.step(Action::from_index(a)).map_err(wrap)?;
                let mut finished = None;
                let obs = if res.done {
                    let st = w.env.state().expect("active episode");
                    finished = Some(EpisodeResult {
                        success: res.info.success,
                        collision: st.collided,
                        shortest: st.episode.shortest,
                        path: st.path_length,
                        reward: st.total_reward,
                        steps: st.steps,
                    });
                    w.env.reset().map_err(wrap)?
                } else {
                    res.observation
                };
                let (prepared, goal) = prepare(policy, &obs).map_err(wrap)?;
                let old = std::mem::replace(&mut w.obs, prepared);
                w.goal = goal;
                w.start = res.done;
                w.prev = if res.done { None } else { Some(a) };
                Ok((res.reward, res.done, finished, old))
            })
            .collect();
        for r in stepped {
            let (reward, done, finished, old_obs) = r?;
            batch.obs.push(old_obs);
            batch.rewards.push(reward);
            batch.dones.push(done);
            batch.episodes.extend(finished);
        }
    }
    let out = policy.step(store, &pool.inputs(), &pool.hidden)?;
    batch.bootstrap = out.values;
    Ok(batch)
}
