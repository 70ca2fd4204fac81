/// Generalised advantage estimates for a `T × B` rollout stored in
/// (time, worker) order. `dones[t·B + b]` marks the last step of an episode;
/// `bootstrap[b]` is the value after the final step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let b = bootstrap.len();
    let n = rewards.len();
    assert!(b > 0 && n % b == 0 && values.len() == n && dones.len() == n);
    let t = n / b;
    let mut adv = vec![0.0; n];
    for w in 0..b {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[w];
        for s in (0..t).rev() {
            let i = s * b + w;
            let mask = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * mask - values[i];
            next_adv = delta + gamma * lambda * mask * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to zero mean and unit variance.
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var.sqrt() + 1e-8);
    for x in xs {
        *x = (*x - mean) * inv;
    }
}
