use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gae::{compute_gae, normalize};
use super::ppo::{ppo_update, LossStats};
use super::rollout::{collect_rollouts, WorkerPool};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{ActorCritic, Adam, Checkpoint, ObservationSpec, ParamStore, PolicyConfig};
use crate::sim::FloorplanWorld;
use crate::task::{evaluate, stream_rng, Conditions, EnvConfig, EvalReport, LearnedAgent, NavEnv};

/// Precision used for training and inference.
pub type Scalar = f32;

const CHECKPOINT_KIND: &str = "pcnav-policy";
/// Episodes averaged for the per-update reward and success columns.
const EPISODE_WINDOW: usize = 100;

/// Everything needed to rebuild a policy from a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub update: usize,
    pub env_steps: u64,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub spec: ObservationSpec,
    pub env: EnvConfig,
}

pub fn save_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    store: &ParamStore<Scalar>,
    adam: Option<&Adam<Scalar>>,
) -> Result<()> {
    let mut arrays = store.to_arrays();
    if let Some(a) = adam {
        arrays.extend(a.to_arrays(store));
    }
    Checkpoint {
        meta: serde_json::to_value(meta)?,
        arrays,
    }
    .save(path)
}

/// A policy restored from disk.
pub struct LoadedPolicy {
    pub policy: ActorCritic,
    pub store: ParamStore<Scalar>,
    pub meta: CheckpointMeta,
    pub checkpoint: Checkpoint,
}

pub fn load_policy(path: &Path) -> Result<LoadedPolicy> {
    let checkpoint = Checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(checkpoint.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("{}: unreadable metadata: {e}", path.display())))?;
    if meta.kind != CHECKPOINT_KIND {
        return Err(Error::Checkpoint(format!("{}: not a policy checkpoint", path.display())));
    }
    let mut store = ParamStore::new();
    let policy = ActorCritic::new(&mut store, &meta.policy, meta.spec, &mut stream_rng(0, 0))?;
    store.load_from(&checkpoint.arrays)?;
    Ok(LoadedPolicy {
        policy,
        store,
        meta,
        checkpoint,
    })
}

pub fn load_worlds(dirs: &[PathBuf]) -> Result<Vec<Arc<FloorplanWorld>>> {
    let mut out = Vec::new();
    for d in dirs {
        out.extend(FloorplanWorld::load_dir(d)?.into_iter().map(Arc::new));
    }
    if out.is_empty() {
        return Err(Error::Config("no worlds found".into()));
    }
    Ok(out)
}

/// One row of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: usize,
    pub env_steps: u64,
    /// Mean over the most recent finished episodes (NaN before the first).
    pub mean_episode_reward: f64,
    pub success_rate: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Seconds since training started.
    pub wall_clock: f64,
}

#[derive(Clone, Debug)]
pub struct CheckpointScore {
    pub path: PathBuf,
    pub update: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub updates: usize,
    pub env_steps: u64,
    pub checkpoints: Vec<PathBuf>,
    /// Held-out scores of every checkpoint, in update order.
    pub scores: Vec<CheckpointScore>,
    /// Index into `scores` of the highest mean held-out reward.
    pub best: Option<usize>,
}

impl TrainSummary {
    pub fn best(&self) -> Option<&CheckpointScore> {
        self.best.map(|i| &self.scores[i])
    }
}

pub struct TrainOptions<'a> {
    pub resume: Option<&'a Path>,
    /// Score every checkpoint on the held-out worlds after training.
    pub select: bool,
    pub progress: Option<&'a mut dyn FnMut(&MetricsRow)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions {
            resume: None,
            select: true,
            progress: None,
        }
    }
}

fn checkpoint_path(dir: &Path, update: usize) -> PathBuf {
    dir.join(format!("ckpt_{update:06}.bin"))
}

/// Alternates rollouts and PPO updates, writing `metrics.csv` and periodic
/// checkpoints into `out`; then scores every checkpoint on the held-out
/// worlds (`selection.csv`, `best.json`).
pub fn train(cfg: &RunConfig, out: &Path, mut opts: TrainOptions<'_>) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let train_worlds = load_worlds(&cfg.worlds.train)?;
    let env_cfg = cfg.env_config();
    let kind = cfg.observation_kind();
    let seed = cfg.seeds.train;
    let ppo = &cfg.ppo;

    let mut store = ParamStore::<Scalar>::new();
    let policy = ActorCritic::new(&mut store, &cfg.policy_config(), cfg.observation_spec(), &mut stream_rng(seed, 1))?;
    let mut adam = Adam::new(&store, ppo.adam_eps);
    let mut start = 0;
    let mut env_steps = 0u64;
    if let Some(path) = opts.resume {
        let loaded = load_policy(path)?;
        if loaded.meta.policy != policy.config || loaded.meta.spec != policy.spec {
            return Err(Error::Config(format!(
                "{}: checkpoint architecture differs from the configuration",
                path.display()
            )));
        }
        store = loaded.store;
        adam.load_arrays(&store, &loaded.checkpoint.arrays)?;
        start = loaded.meta.update;
        env_steps = loaded.meta.env_steps;
    }
    let meta = |update: usize, env_steps: u64| CheckpointMeta {
        kind: CHECKPOINT_KIND.into(),
        update,
        env_steps,
        seed,
        policy: policy.config.clone(),
        spec: policy.spec,
        env: env_cfg.clone(),
    };

    // Streams are keyed on the starting update so a resumed run does not
    // replay the episodes it has already seen.
    let run_seed = seed ^ (start as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let envs = (0..ppo.num_workers)
        .map(|w| NavEnv::new(&train_worlds, env_cfg.clone(), kind, stream_rng(run_seed, 1000 + w as u64)))
        .collect::<Result<Vec<_>>>()?;
    let rngs = (0..ppo.num_workers).map(|w| stream_rng(run_seed, 2000 + w as u64)).collect();
    let mut pool = WorkerPool::new(&policy, envs, rngs)?;
    let mut shuffle_rng = stream_rng(run_seed, 2);

    let metrics_path = out.join("metrics.csv");
    let file = if start == 0 {
        fs::File::create(&metrics_path)
    } else {
        fs::OpenOptions::new().append(true).create(true).open(&metrics_path)
    }
    .map_err(|e| Error::io(&metrics_path, e))?;
    let fresh = start == 0 || file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    let mut metrics = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);

    let mut checkpoints = Vec::new();
    if start == 0 {
        let p = checkpoint_path(&ckpt_dir, 0);
        save_checkpoint(&p, &meta(0, 0), &store, Some(&adam))?;
        checkpoints.push(p);
    }
    let mut window: VecDeque<(f64, bool)> = VecDeque::with_capacity(EPISODE_WINDOW);
    for u in start..ppo.updates {
        let batch = collect_rollouts(&policy, &store, &mut pool, ppo.rollout_length)?;
        let (mut adv, ret) = compute_gae(&batch.rewards, &batch.values, &batch.dones, &batch.bootstrap, ppo.gamma, ppo.lambda);
        normalize(&mut adv);
        let stats: LossStats = ppo_update(&policy, &mut store, &mut adam, &batch, &adv, &ret, ppo, ppo.lr_at(u), u, &mut shuffle_rng)?;
        env_steps += batch.len() as u64;
        for e in &batch.episodes {
            if window.len() == EPISODE_WINDOW {
                window.pop_front();
            }
            window.push_back((e.reward, e.success));
        }
        let n = window.len() as f64;
        let row = MetricsRow {
            update: u + 1,
            env_steps,
            mean_episode_reward: if n > 0.0 { window.iter().map(|w| w.0).sum::<f64>() / n } else { f64::NAN },
            success_rate: if n > 0.0 { window.iter().filter(|w| w.1).count() as f64 / n } else { f64::NAN },
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            wall_clock: started.elapsed().as_secs_f64(),
        };
        metrics.serialize(&row)?;
        metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
        if let Some(p) = opts.progress.as_mut() {
            p(&row);
        }
        if (u + 1) % ppo.checkpoint_every == 0 || u + 1 == ppo.updates {
            let p = checkpoint_path(&ckpt_dir, u + 1);
            save_checkpoint(&p, &meta(u + 1, env_steps), &store, Some(&adam))?;
            checkpoints.push(p);
        }
    }
    drop(metrics);

    let mut summary = TrainSummary {
        updates: ppo.updates.max(start),
        env_steps,
        checkpoints,
        scores: Vec::new(),
        best: None,
    };
    if opts.select {
        select_checkpoint(cfg, &ckpt_dir, out, &mut summary)?;
    }
    Ok(summary)
}

/// Scores every checkpoint in `ckpt_dir` on the held-out worlds and records
/// the one with the highest mean reward (earliest on ties).
fn select_checkpoint(cfg: &RunConfig, ckpt_dir: &Path, out: &Path, summary: &mut TrainSummary) -> Result<()> {
    let eval_worlds = load_worlds(&cfg.worlds.eval)?;
    let mut paths: Vec<PathBuf> = fs::read_dir(ckpt_dir)
        .map_err(|e| Error::io(ckpt_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    let conditions = Conditions {
        camera: cfg.randomization.camera_enabled,
        motion: cfg.randomization.motion_enabled,
    };
    let sel_path = out.join("selection.csv");
    let mut sel = csv::Writer::from_path(&sel_path)?;
    sel.write_record(["checkpoint", "update", "reward_mean", "spl_mean", "success_mean", "collision_mean"])?;
    for p in paths {
        let loaded = load_policy(&p)?;
        let kind = if loaded.policy.uses_depth() {
            crate::task::ObservationKind::Depth
        } else {
            crate::task::ObservationKind::Cloud
        };
        let mut agent = LearnedAgent::new(loaded.policy, loaded.store, cfg.eval.greedy);
        let report = evaluate(
            &mut agent,
            &eval_worlds,
            &loaded.meta.env,
            kind,
            cfg.eval.episodes,
            conditions,
            &cfg.seeds.eval,
            None,
        )?;
        sel.write_record([
            p.file_name().unwrap().to_string_lossy().into_owned(),
            loaded.meta.update.to_string(),
            report.reward.mean.to_string(),
            report.spl.mean.to_string(),
            report.success.mean.to_string(),
            report.collision.mean.to_string(),
        ])?;
        let better = summary
            .best()
            .is_none_or(|b| report.reward.mean > b.report.reward.mean);
        summary.scores.push(CheckpointScore {
            path: p,
            update: loaded.meta.update,
            report,
        });
        if better {
            summary.best = Some(summary.scores.len() - 1);
        }
    }
    sel.flush().map_err(|e| Error::io(&sel_path, e))?;
    if let Some(b) = summary.best() {
        let json = serde_json::json!({
            "checkpoint": b.path,
            "update": b.update,
            "report": b.report,
        });
        let path = out.join("best.json");
        fs::write(&path, serde_json::to_string_pretty(&json)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
