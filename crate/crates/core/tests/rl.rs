use std::sync::Arc;

use pcnav::config::RunConfig;
use pcnav::nn::{
    ActorCritic, Adam, EncoderConfig, EncoderVariant, Graph, ObservationSpec, ParamStore, PolicyConfig, Prepared,
    Tensor, NUM_ACTIONS,
};
use pcnav::rl::{
    collect_rollouts, compute_gae, load_policy, normalize, ppo_loss, ppo_update, train, PpoConfig, RolloutBatch,
    TrainOptions, WorkerPool,
};
use pcnav::sim::FloorplanWorld;
use pcnav::task::{stream_rng, EnvConfig, NavEnv, ObservationKind};
use pcnav::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn worlds_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../worlds")
}

/// Advantages written out as explicit discounted sums of TD errors.
fn gae_oracle(r: &[f64], v: &[f64], d: &[bool], boot: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let b = boot.len();
    let t = r.len() / b;
    let value_after = |s: usize, w: usize| if s + 1 < t { v[(s + 1) * b + w] } else { boot[w] };
    let mut out = vec![0.0; r.len()];
    for w in 0..b {
        for s in 0..t {
            let mut total = 0.0;
            let mut weight = 1.0;
            for l in s..t {
                let i = l * b + w;
                let alive = if d[i] { 0.0 } else { 1.0 };
                total += weight * (r[i] + gamma * value_after(l, w) * alive - v[i]);
                if d[i] {
                    break;
                }
                weight *= gamma * lambda;
            }
            out[s * b + w] = total;
        }
    }
    out
}

#[test]
fn gae_matches_explicit_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let (t, b) = (10, 3);
        let r: Vec<f64> = (0..t * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..t * b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let d: Vec<bool> = (0..t * b).map(|_| rng.random_bool(0.2)).collect();
        let boot: Vec<f64> = (0..b).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (gamma, lambda) = (rng.random_range(0.8..1.0), rng.random_range(0.5..1.0));
        let (adv, ret) = compute_gae(&r, &v, &d, &boot, gamma, lambda);
        let want = gae_oracle(&r, &v, &d, &boot, gamma, lambda);
        for i in 0..t * b {
            assert!((adv[i] - want[i]).abs() < 1e-9);
            assert!((ret[i] - (adv[i] + v[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn gae_monte_carlo_and_terminal_cases() {
    let r = [1.0, 2.0, 3.0, 4.0];
    let v = [0.5, -1.0, 2.0, 0.0];
    let (adv, _) = compute_gae(&r, &v, &[false; 4], &[0.0], 1.0, 1.0);
    for t in 0..4 {
        let tail: f64 = r[t..].iter().sum();
        assert!((adv[t] - (tail - v[t])).abs() < 1e-12);
    }
    let (adv, ret) = compute_gae(&[2.5], &[0.75], &[true], &[100.0], 0.99, 0.95);
    assert_eq!(adv[0], 2.5 - 0.75);
    assert_eq!(ret[0], 2.5);
}

#[test]
fn normalized_advantages_have_unit_scale() {
    let mut xs = vec![1.0, 2.0, 3.0, 10.0];
    normalize(&mut xs);
    let mean = xs.iter().sum::<f64>() / 4.0;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-6);
}

fn tiny_policy(seed: u64) -> (ActorCritic, ParamStore<f64>) {
    let cfg = PolicyConfig {
        encoder: EncoderConfig {
            variant: EncoderVariant::Pointnet,
            point_widths: vec![8, 8],
            ..Default::default()
        },
        hidden: 8,
    };
    let spec = ObservationSpec {
        target_points: 4,
        image: (36, 36),
        point_scale: 5.0,
        max_depth: 10.0,
    };
    let mut store = ParamStore::new();
    let p = ActorCritic::new(&mut store, &cfg, spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (p, store)
}

/// A batch of `t × b` steps with random observations and the policy's own
/// log-probabilities and values.
fn synthetic_batch(policy: &ActorCritic, store: &ParamStore<f64>, t: usize, b: usize, seed: u64) -> RolloutBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = t * b;
    let obs: Vec<Prepared> = (0..n)
        .map(|_| Prepared::Points((0..12).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
        .collect();
    let mut batch = RolloutBatch {
        steps: t,
        workers: b,
        obs,
        goals: (0..n).map(|_| [rng.random_range(0.0..5.0), 0.6, 0.8]).collect(),
        prev_actions: (0..n).map(|i| if i < b { None } else { Some(i % NUM_ACTIONS) }).collect(),
        starts: (0..n).map(|i| i < b).collect(),
        actions: (0..n).map(|_| rng.random_range(0..NUM_ACTIONS)).collect(),
        log_probs: vec![0.0; n],
        values: vec![0.0; n],
        rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        dones: vec![false; n],
        h0: Tensor::zeros(b, policy.hidden()),
        bootstrap: vec![0.0; b],
        episodes: Vec::new(),
    };
    refresh_old_policy(policy, store, &mut batch);
    batch
}

fn refresh_old_policy(policy: &ActorCritic, store: &ParamStore<f64>, batch: &mut RolloutBatch<f64>) {
    let inputs: Vec<_> = (0..batch.len()).map(|i| batch.input(i)).collect();
    let mut g = Graph::new();
    let h0 = g.constant(batch.h0.clone());
    let out = policy.forward_sequence(&mut g, store, &inputs, batch.steps, batch.workers, h0).unwrap();
    let lp = g.log_softmax(out.logits);
    for i in 0..batch.len() {
        batch.log_probs[i] = g.value(lp).get(i, batch.actions[i]);
        batch.values[i] = g.value(out.values).get(i, 0);
    }
}

fn policy_grads(
    policy: &ActorCritic,
    store: &ParamStore<f64>,
    batch: &RolloutBatch<f64>,
    adv: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let cfg = PpoConfig::default();
    let mut g = Graph::new();
    let ret = vec![0.0; batch.len()];
    let cols: Vec<usize> = (0..batch.workers).collect();
    let loss = ppo_loss(&mut g, policy, store, batch, adv, &ret, &cols, &cfg).unwrap();
    let ratios = g.value(loss.ratio).data.clone();
    let grads = g.backward(loss.policy);
    let mut s = store.clone();
    s.zero_grad();
    grads.accumulate_into(&g, &mut s);
    let flat = (0..s.len()).flat_map(|i| s.grad(i).data.clone()).collect();
    (flat, ratios)
}

#[test]
fn unchanged_policy_has_unit_ratio_and_reinforce_gradient() {
    let (policy, store) = tiny_policy(1);
    let batch = synthetic_batch(&policy, &store, 3, 2, 2);
    let adv: Vec<f64> = (0..6).map(|i| (i as f64 - 2.5) * 0.7).collect();
    let (ppo_grad, ratios) = policy_grads(&policy, &store, &batch, &adv);
    assert!(ratios.iter().all(|r| (r - 1.0).abs() < 1e-12));

    // Independent gradient of −mean(A · log π(a)).
    let mut g = Graph::new();
    let inputs: Vec<_> = (0..batch.len()).map(|i| batch.input(i)).collect();
    let h0 = g.constant(batch.h0.clone());
    let out = policy.forward_sequence(&mut g, &store, &inputs, 3, 2, h0).unwrap();
    let lp = g.log_softmax(out.logits);
    let picked = g.pick(lp, &batch.actions);
    let a = g.constant(Tensor::from_vec(6, 1, adv.clone()));
    let weighted = g.mul(picked, a);
    let m = g.mean(weighted);
    let loss = g.affine(m, -1.0, 0.0);
    let grads = g.backward(loss);
    let mut s = store.clone();
    s.zero_grad();
    grads.accumulate_into(&g, &mut s);
    let reinforce: Vec<f64> = (0..s.len()).flat_map(|i| s.grad(i).data.clone()).collect();
    let max_diff = ppo_grad.iter().zip(&reinforce).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(max_diff < 1e-9, "max diff {max_diff}");
    assert!(reinforce.iter().any(|x| x.abs() > 1e-6));
}

#[test]
fn clipped_sample_contributes_no_gradient() {
    let (policy, store) = tiny_policy(3);
    let mut batch = synthetic_batch(&policy, &store, 2, 1, 4);
    // Sample 0: ratio e^0.5 > 1 + ε with a positive advantage.
    batch.log_probs[0] -= 0.5;
    let (grad, ratios) = policy_grads(&policy, &store, &batch, &[1.3, 0.0]);
    assert!(ratios[0] > 1.2);
    assert!(grad.iter().all(|g| *g == 0.0), "plateau leaked gradient");
    // Inside the trust region the same sample does push the policy.
    let mut inside = batch.clone();
    inside.log_probs[0] += 0.5 - 0.05;
    let (grad, _) = policy_grads(&policy, &store, &inside, &[1.3, 0.0]);
    assert!(grad.iter().any(|g| g.abs() > 1e-8));
    // A negative advantage beyond 1 + ε is not clipped.
    let (grad, _) = policy_grads(&policy, &store, &batch, &[-1.3, 0.0]);
    assert!(grad.iter().any(|g| g.abs() > 1e-8));
}

#[test]
fn bandit_converges_to_rewarded_arm() {
    let (policy, mut store) = tiny_policy(5);
    let cfg = PpoConfig {
        rollout_length: 8,
        num_workers: 4,
        ..PpoConfig::default()
    };
    let mut adam = Adam::new(&store, cfg.adam_eps);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let obs = Prepared::Points(vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5, 0.2, 0.2, 0.2, -0.1, 0.0, 0.4]);
    let greedy_prob = |store: &ParamStore<f64>| {
        let input = pcnav::nn::PolicyInput {
            obs: &obs,
            goal: [1.0, 1.0, 0.0],
            prev_action: None,
            episode_start: true,
        };
        let out = policy.step(store, &[input], &Tensor::zeros(1, policy.hidden())).unwrap();
        pcnav::nn::softmax(&out.logits[0])[0]
    };
    let start = greedy_prob(&store);
    let mut reached = None;
    for u in 0..200 {
        // One-step episodes: arm 0 pays 1, every other arm pays 0.
        let n = cfg.rollout_length * cfg.num_workers;
        let mut batch = RolloutBatch {
            steps: cfg.rollout_length,
            workers: cfg.num_workers,
            obs: vec![obs.clone(); n],
            goals: vec![[1.0, 1.0, 0.0]; n],
            prev_actions: vec![None; n],
            starts: vec![true; n],
            actions: vec![0; n],
            log_probs: vec![0.0; n],
            values: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![true; n],
            h0: Tensor::zeros(cfg.num_workers, policy.hidden()),
            bootstrap: vec![0.0; cfg.num_workers],
            episodes: Vec::new(),
        };
        refresh_old_policy(&policy, &store, &mut batch);
        let p = {
            let mut g = Graph::new();
            let inputs: Vec<_> = (0..n).map(|i| batch.input(i)).collect();
            let h0 = g.constant(batch.h0.clone());
            let out = policy.forward_sequence(&mut g, &store, &inputs, cfg.rollout_length, cfg.num_workers, h0).unwrap();
            let logits = g.value(out.logits).clone();
            (0..n).map(|i| std::array::from_fn::<f64, 4, _>(|a| logits.get(i, a))).collect::<Vec<_>>()
        };
        for i in 0..n {
            let a = pcnav::nn::sample_action(&p[i], &mut rng);
            batch.actions[i] = a;
            batch.rewards[i] = if a == 0 { 1.0 } else { 0.0 };
        }
        refresh_old_policy(&policy, &store, &mut batch);
        let (mut adv, ret) = compute_gae(&batch.rewards, &batch.values, &batch.dones, &batch.bootstrap, cfg.gamma, cfg.lambda);
        normalize(&mut adv);
        ppo_update(&policy, &mut store, &mut adam, &batch, &adv, &ret, &cfg, cfg.lr, u, &mut rng).unwrap();
        if greedy_prob(&store) > 0.95 {
            reached = Some(u + 1);
            break;
        }
    }
    assert!(reached.is_some(), "greedy probability {} after 200 updates (start {start})", greedy_prob(&store));
}

#[test]
fn non_finite_loss_aborts_with_step() {
    let (policy, mut store) = tiny_policy(7);
    let batch = synthetic_batch(&policy, &store, 2, 2, 8);
    let id = store.id("critic.b").unwrap();
    store.value_mut(id).data[0] = f64::NAN;
    let mut adam = Adam::new(&store, 1e-5);
    let adv = vec![0.5; 4];
    let err = ppo_update(&policy, &mut store, &mut adam, &batch, &adv, &adv, &PpoConfig::default(), 1e-3, 17, &mut ChaCha8Rng::seed_from_u64(0));
    assert!(matches!(err, Err(Error::NonFiniteLoss { update: 17, minibatch: 0 })));
}

fn corridor_worlds() -> Vec<Arc<FloorplanWorld>> {
    vec![Arc::new(FloorplanWorld::load(&worlds_dir().join("simple/train/corridor_straight.map")).unwrap())]
}

fn pool(policy: &ActorCritic, cfg: &EnvConfig, kind: ObservationKind, seed: u64) -> WorkerPool<f64> {
    let worlds = corridor_worlds();
    let envs = (0..2).map(|w| NavEnv::new(&worlds, cfg.clone(), kind, stream_rng(seed, w)).unwrap()).collect();
    WorkerPool::new(policy, envs, (0..2).map(|w| stream_rng(seed, 10 + w)).collect()).unwrap()
}

fn small_env_policy(variant: EncoderVariant) -> (ActorCritic, ParamStore<f64>, EnvConfig) {
    let mut env = EnvConfig::default();
    env.camera.width = 36;
    env.camera.height = 36;
    env.downsample.target_points = 32;
    let cfg = PolicyConfig {
        encoder: EncoderConfig {
            variant,
            point_widths: vec![8, 16],
            conv_channels: [4, 4, 4],
            depth_fc: 16,
            ..Default::default()
        },
        hidden: 8,
    };
    let spec = ObservationSpec {
        target_points: 32,
        image: (36, 36),
        point_scale: 5.0,
        max_depth: 10.0,
    };
    let mut store = ParamStore::new();
    let p = ActorCritic::new(&mut store, &cfg, spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    (p, store, env)
}

#[test]
fn forced_stop_ends_every_episode_after_one_step() {
    let (policy, mut store, mut env) = small_env_policy(EncoderVariant::Pointnet);
    env.stop_ends_episode = true;
    let id = store.id("actor.b").unwrap();
    store.value_mut(id).data[3] = f64::INFINITY;
    let mut p = pool(&policy, &env, ObservationKind::Cloud, 1);
    let batch = collect_rollouts(&policy, &store, &mut p, 6).unwrap();
    assert_eq!(batch.len(), 12);
    assert!(batch.actions.iter().all(|&a| a == 3));
    assert!(batch.dones.iter().all(|&d| d));
    assert!(batch.starts.iter().all(|&s| s));
    assert_eq!(batch.episodes.len(), 12);
    assert!(batch.episodes.iter().all(|e| e.steps == 1));
}

#[test]
fn rollouts_are_deterministic() {
    for (variant, kind) in [
        (EncoderVariant::Pointnet, ObservationKind::Cloud),
        (EncoderVariant::DepthBaseline, ObservationKind::Depth),
    ] {
        let (policy, store, env) = small_env_policy(variant);
        let a = collect_rollouts(&policy, &store, &mut pool(&policy, &env, kind, 3), 16).unwrap();
        let b = collect_rollouts(&policy, &store, &mut pool(&policy, &env, kind, 3), 16).unwrap();
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.rewards, b.rewards);
        assert_eq!(a.log_probs, b.log_probs);
        assert_eq!(a.bootstrap, b.bootstrap);
        assert_eq!(a.len(), 32);
    }
}

fn tiny_run(out: &std::path::Path, updates: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.worlds.train = vec![worlds_dir().join("simple/train")];
    cfg.worlds.eval = vec![worlds_dir().join("simple/eval")];
    cfg.camera.width = 36;
    cfg.camera.height = 36;
    cfg.sim.downsample.target_points = 32;
    cfg.sim.max_steps = 20;
    cfg.encoder.point_widths = vec![8, 16];
    cfg.hidden = 8;
    cfg.ppo.updates = updates;
    cfg.ppo.rollout_length = 8;
    cfg.ppo.num_workers = 2;
    cfg.ppo.checkpoint_every = 2;
    cfg.eval.episodes = 2;
    cfg.seeds.eval = vec![1];
    cfg.output.dir = out.to_path_buf();
    cfg
}

fn csv_without_clock(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    let clock = headers.iter().position(|h| h == "wall_clock").unwrap();
    r.records()
        .map(|rec| {
            rec.unwrap()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != clock)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_selects_a_checkpoint() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let cfg = tiny_run(d.path(), 3);
        let summary = train(&cfg, d.path(), TrainOptions::default()).unwrap();
        assert_eq!(summary.checkpoints.len(), 3); // 0, 2 and the final 3
        assert_eq!(summary.scores.len(), 3);
        assert!(summary.best().is_some());
        assert!(d.path().join("best.json").exists());
    }
    let a = csv_without_clock(&dirs[0].path().join("metrics.csv"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, csv_without_clock(&dirs[1].path().join("metrics.csv")));
    let header = std::fs::read_to_string(dirs[0].path().join("metrics.csv")).unwrap();
    assert!(header.starts_with(
        "update,env_steps,mean_episode_reward,success_rate,policy_loss,value_loss,entropy,wall_clock"
    ));
}

#[test]
fn zero_updates_scores_the_initial_policy() {
    let d = tempfile::tempdir().unwrap();
    let summary = train(&tiny_run(d.path(), 0), d.path(), TrainOptions::default()).unwrap();
    assert_eq!(summary.checkpoints.len(), 1);
    assert_eq!(summary.scores.len(), 1);
    assert_eq!(summary.best().unwrap().update, 0);
}

#[test]
fn resume_continues_from_saved_state() {
    let d = tempfile::tempdir().unwrap();
    let cfg = tiny_run(d.path(), 2);
    let opts = TrainOptions {
        select: false,
        ..Default::default()
    };
    train(&cfg, d.path(), opts).unwrap();
    let ckpt = d.path().join("checkpoints/ckpt_000002.bin");
    let saved = load_policy(&ckpt).unwrap();

    // Loss on a frozen batch is identical before and after the round trip.
    let policy = &saved.policy;
    let store64 = saved.store.cast::<f64>();
    let batch = synthetic_batch_for(policy, &store64);
    let loss_of = |s: &ParamStore<f64>| {
        let mut g = Graph::new();
        let adv = vec![0.3; batch.len()];
        let cols: Vec<usize> = (0..batch.workers).collect();
        let l = ppo_loss(&mut g, policy, s, &batch, &adv, &adv, &cols, &PpoConfig::default()).unwrap();
        g.value(l.total).data[0]
    };
    let reloaded = load_policy(&ckpt).unwrap().store.cast::<f64>();
    assert_eq!(loss_of(&store64), loss_of(&reloaded));

    let mut longer = cfg.clone();
    longer.ppo.updates = 4;
    let summary = train(
        &longer,
        d.path(),
        TrainOptions {
            resume: Some(&ckpt),
            select: false,
            progress: None,
        },
    )
    .unwrap();
    assert_eq!(summary.updates, 4);
    let rows = csv_without_clock(&d.path().join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "4");
    assert_eq!(load_policy(&d.path().join("checkpoints/ckpt_000004.bin")).unwrap().meta.env_steps, 64);
}

fn synthetic_batch_for(policy: &ActorCritic, store: &ParamStore<f64>) -> RolloutBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (t, b) = (4, 2);
    let n = t * b;
    let pts = policy.spec.target_points * 3;
    let mut batch = RolloutBatch {
        steps: t,
        workers: b,
        obs: (0..n)
            .map(|_| Prepared::Points((0..pts).map(|_| rng.random_range(-1.0f32..1.0)).collect()))
            .collect(),
        goals: vec![[2.0, 1.0, 0.0]; n],
        prev_actions: vec![None; n],
        starts: (0..n).map(|i| i < b).collect(),
        actions: (0..n).map(|i| i % NUM_ACTIONS).collect(),
        log_probs: vec![0.0; n],
        values: vec![0.0; n],
        rewards: vec![0.1; n],
        dones: vec![false; n],
        h0: Tensor::zeros(b, policy.hidden()),
        bootstrap: vec![0.0; b],
        episodes: Vec::new(),
    };
    refresh_old_policy(policy, store, &mut batch);
    batch
}
