use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary of one finished episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub collision: bool,
    /// Geodesic start-to-goal distance, meters.
    pub shortest: f64,
    /// Distance actually travelled, meters.
    pub path: f64,
    pub reward: f64,
    pub steps: usize,
}

/// Success weighted by path length: mean of `s·l / max(p, l)`.
pub fn spl(episodes: &[EpisodeResult]) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Undefined("SPL of an empty episode set".into()));
    }
    let mut acc = 0.0;
    for e in episodes {
        if !(e.shortest > 0.0) {
            return Err(Error::contract(format!("shortest path must be positive, got {}", e.shortest)));
        }
        if e.success {
            acc += e.shortest / e.path.max(e.shortest);
        }
    }
    Ok(acc / episodes.len() as f64)
}

/// Aggregate metrics over one episode set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub reward: f64,
    pub spl: f64,
    pub success: f64,
    pub collision: f64,
}

impl Metrics {
    pub fn from_episodes(episodes: &[EpisodeResult]) -> Result<Self> {
        let n = episodes.len() as f64;
        let spl = spl(episodes)?;
        let frac = |f: fn(&EpisodeResult) -> bool| episodes.iter().filter(|e| f(e)).count() as f64 / n;
        Ok(Metrics {
            episodes: episodes.len(),
            reward: episodes.iter().map(|e| e.reward).sum::<f64>() / n,
            spl,
            success: frac(|e| e.success),
            collision: frac(|e| e.collision),
        })
    }
}

/// Mean and population standard deviation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3}±{:.3}", self.mean, self.std)
    }
}

/// Metrics across evaluation seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conditions: String,
    pub per_seed: Vec<Metrics>,
    pub reward: MeanStd,
    pub spl: MeanStd,
    pub success: MeanStd,
    pub collision: MeanStd,
}

impl EvalReport {
    pub fn new(conditions: impl Into<String>, per_seed: Vec<Metrics>) -> Self {
        let col = |f: fn(&Metrics) -> f64| MeanStd::of(&per_seed.iter().map(f).collect::<Vec<_>>());
        EvalReport {
            conditions: conditions.into(),
            reward: col(|m| m.reward),
            spl: col(|m| m.spl),
            success: col(|m| m.success),
            collision: col(|m| m.collision),
            per_seed,
        }
    }
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    condition: &'a str,
    reward_mean: f64,
    reward_std: f64,
    spl_mean: f64,
    spl_std: f64,
    success_mean: f64,
    success_std: f64,
    collision_mean: f64,
    collision_std: f64,
}

/// Writes one CSV row per report.
pub fn write_summary_csv<W: std::io::Write>(w: W, reports: &[EvalReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(SummaryRow {
            condition: &r.conditions,
            reward_mean: r.reward.mean,
            reward_std: r.reward.std,
            spl_mean: r.spl.mean,
            spl_std: r.spl.std,
            success_mean: r.success.mean,
            success_std: r.success.std,
            collision_mean: r.collision.mean,
            collision_std: r.collision.std,
        })?;
    }
    out.flush().map_err(|e| Error::io("<summary csv>", e))?;
    Ok(())
}
