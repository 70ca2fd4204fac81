use std::sync::Arc;

use super::agents::Agent;
use super::env::{stream_rng, Conditions, EnvConfig, NavEnv, ObservationKind};
use super::log::{StepRecord, TrajectoryWriter};
use super::metrics::{EpisodeResult, EvalReport, Metrics};
use crate::error::Result;
use crate::sim::FloorplanWorld;

/// Resets `env` and runs one episode to completion, optionally logging every step.
pub fn run_episode<A: Agent + ?Sized>(
    env: &mut NavEnv,
    agent: &mut A,
    agent_seed: u64,
    mut log: Option<&mut TrajectoryWriter>,
) -> Result<EpisodeResult> {
    let mut obs = env.reset()?;
    agent.begin_episode(agent_seed);
    run_from(env, agent, &mut obs, &mut log)
}

fn run_from<A: Agent + ?Sized>(
    env: &mut NavEnv,
    agent: &mut A,
    obs: &mut super::env::Observation,
    log: &mut Option<&mut TrajectoryWriter>,
) -> Result<EpisodeResult> {
    let mut success = false;
    loop {
        let action = agent.act(env, obs)?;
        let out = env.step(action)?;
        let st = env.state().expect("active episode");
        if let Some(w) = log.as_deref_mut() {
            w.write(&StepRecord {
                episode: st.id,
                step: st.steps,
                x: st.agent.x,
                y: st.agent.y,
                heading: st.agent.heading,
                action,
                reward: out.reward,
                collided: out.info.collision,
                geodesic: out.info.geodesic_to_goal,
                success: out.info.success,
                done: out.done,
                camera: st.mount,
                goal: [st.episode.goal.0, st.episode.goal.1],
                world: env.world(st.world).name.clone(),
            })?;
        }
        success |= out.info.success;
        *obs = out.observation;
        if out.done {
            return Ok(EpisodeResult {
                success,
                collision: st.collided,
                shortest: st.episode.shortest,
                path: st.path_length,
                reward: st.total_reward,
                steps: st.steps,
            });
        }
    }
}

/// Evaluates `agent` for `episodes` episodes per seed under `conditions`.
///
/// Episode draws, camera draws and agent sampling are keyed on
/// `(seed, episode index)` only, so different agents see identical episodes.
pub fn evaluate<A: Agent + ?Sized>(
    agent: &mut A,
    worlds: &[Arc<FloorplanWorld>],
    config: &EnvConfig,
    kind: ObservationKind,
    episodes: usize,
    conditions: Conditions,
    seeds: &[u64],
    mut log: Option<&mut TrajectoryWriter>,
) -> Result<EvalReport> {
    let mut cfg = config.clone();
    cfg.randomization = cfg.randomization.with_conditions(conditions);
    let mut env = NavEnv::new(worlds, cfg, kind, stream_rng(0, 0))?;
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut draws = stream_rng(seed, 0);
        let mut results = Vec::with_capacity(episodes);
        for i in 0..episodes as u64 {
            let (world, ep) = env.sample_episode(&mut draws)?;
            env.set_rng(stream_rng(seed, 1 + 2 * i));
            let mut obs = env.begin(world, ep)?;
            agent.begin_episode(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (2 + 2 * i));
            results.push(run_from(&mut env, agent, &mut obs, &mut log)?);
        }
        if !results.is_empty() {
            per_seed.push(Metrics::from_episodes(&results)?);
        }
    }
    Ok(EvalReport::new(conditions.label(), per_seed))
}
