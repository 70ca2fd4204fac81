use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::PpoConfig;
use super::rollout::RolloutBatch;
use crate::error::{Error, Result};
use crate::nn::{ActorCritic, Adam, Graph, ParamStore, PolicyInput, Real, Tensor, Var};

/// Loss terms for one minibatch of whole worker segments.
pub struct LossVars {
    pub total: Var,
    /// `−mean(min(r·A, clip(r)·A))`.
    pub policy: Var,
    /// `mean((V − R)²)`.
    pub value: Var,
    /// Mean policy entropy.
    pub entropy: Var,
    /// Probability ratios, one per sample.
    pub ratio: Var,
}

/// Builds the clipped-surrogate loss for workers `cols` of `batch`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_loss<T: Real>(
    g: &mut Graph<T>,
    policy: &ActorCritic,
    store: &ParamStore<T>,
    batch: &RolloutBatch<T>,
    advantages: &[f64],
    returns: &[f64],
    cols: &[usize],
    config: &PpoConfig,
) -> Result<LossVars> {
    let (t, b) = (batch.steps, cols.len());
    let idx: Vec<usize> = (0..t).flat_map(|s| cols.iter().map(move |&w| s * batch.workers + w)).collect();
    let inputs: Vec<PolicyInput<'_>> = idx.iter().map(|&i| batch.input(i)).collect();
    let hdim = policy.hidden();
    let h0 = Tensor::from_vec(
        b,
        hdim,
        cols.iter().flat_map(|&w| batch.h0.row(w).iter().copied()).collect(),
    );
    let h0 = g.constant(h0);
    let out = policy.forward_sequence(g, store, &inputs, t, b, h0)?;
    let col = |g: &mut Graph<T>, f: &dyn Fn(usize) -> f64| {
        g.constant(Tensor::from_vec(idx.len(), 1, idx.iter().map(|&i| T::from_f64(f(i))).collect()))
    };
    let adv = col(g, &|i| advantages[i]);
    let ret = col(g, &|i| returns[i]);
    let old_logp = col(g, &|i| batch.log_probs[i]);

    let logp_all = g.log_softmax(out.logits);
    let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
    let logp = g.pick(logp_all, &actions);
    let diff = g.sub(logp, old_logp);
    let ratio = g.exp(diff);
    let surr1 = g.mul(ratio, adv);
    let clipped = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    let surr2 = g.mul(clipped, adv);
    let surr = g.minimum(surr1, surr2);
    let surr_mean = g.mean(surr);
    let policy_loss = g.affine(surr_mean, -1.0, 0.0);

    let err = g.sub(out.values, ret);
    let sq = g.square(err);
    let value_loss = g.mean(sq);

    let p = g.exp(logp_all);
    let plogp = g.mul(p, logp_all);
    let neg_h = g.row_sum(plogp);
    let neg_h_mean = g.mean(neg_h);
    let entropy = g.affine(neg_h_mean, -1.0, 0.0);

    let vterm = g.affine(value_loss, config.value_weight, 0.0);
    let eterm = g.affine(neg_h_mean, config.entropy_weight, 0.0);
    let pv = g.add(policy_loss, vterm);
    let total = g.add(pv, eterm);
    Ok(LossVars {
        total,
        policy: policy_loss,
        value: value_loss,
        entropy,
        ratio,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 − ε, 1 + ε]`.
    pub clip_fraction: f64,
    /// Gradient norm before clipping, averaged over minibatches.
    pub grad_norm: f64,
}

/// `epochs` passes over `minibatches` random groups of whole worker segments,
/// one optimiser step per group. Statistics are minibatch means.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    policy: &ActorCritic,
    store: &mut ParamStore<T>,
    adam: &mut Adam<T>,
    batch: &RolloutBatch<T>,
    advantages: &[f64],
    returns: &[f64],
    config: &PpoConfig,
    lr: f64,
    update: usize,
    rng: &mut R,
) -> Result<LossStats> {
    let b = batch.workers;
    let groups = config.minibatches.min(b);
    let mut stats = LossStats::default();
    let mut count = 0.0;
    let mut order: Vec<usize> = (0..b).collect();
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(b.div_ceil(groups)).enumerate() {
            let mut cols = chunk.to_vec();
            cols.sort_unstable();
            let mut g = Graph::new();
            let loss = ppo_loss(&mut g, policy, store, batch, advantages, returns, &cols, config)?;
            let total = g.value(loss.total).data[0].as_f64();
            if !total.is_finite() {
                return Err(Error::NonFiniteLoss { update, minibatch: mb });
            }
            let grads = g.backward(loss.total);
            store.zero_grad();
            grads.accumulate_into(&g, store);
            let norm = store.clip_grad_norm(config.max_grad_norm);
            if !norm.is_finite() {
                return Err(Error::NonFiniteLoss { update, minibatch: mb });
            }
            adam.update(store, lr);
            let ratios = g.value(loss.ratio);
            let clipped = ratios
                .data
                .iter()
                .filter(|r| (r.as_f64() - 1.0).abs() > config.clip)
                .count();
            stats.policy_loss += g.value(loss.policy).data[0].as_f64();
            stats.value_loss += g.value(loss.value).data[0].as_f64();
            stats.entropy += g.value(loss.entropy).data[0].as_f64();
            stats.clip_fraction += clipped as f64 / ratios.len() as f64;
            stats.grad_norm += norm;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.clip_fraction /= count;
    stats.grad_norm /= count;
    Ok(stats)
}
