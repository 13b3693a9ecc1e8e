use serde::{Deserialize, Serialize};

use crate::data::{channel_stats, Dataset};
use crate::error::Result;
use crate::exec::Exec;
use crate::model::{Mlp, ModelConfig};
use crate::sampler::NoiseKind;
use crate::scalar::Scalar;

use super::{evaluate, train, EpochRecord, EvalReport, TrainConfig};

/// Per-epoch history plus the final test evaluation of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub history: Vec<EpochRecord>,
    pub eval: EvalReport,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub model: Mlp<T>,
    pub metrics: Metrics,
}

/// Trains on `train_set` and evaluates on `test_set`.
pub fn run_experiment<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    exec: Exec,
) -> Result<RunOutcome<T>> {
    let (model, history) = train::<T>(model_cfg, cfg, train_set, exec)?;
    let eval = evaluate(&model, test_set, train_set.class_counts(), exec)?;
    Ok(RunOutcome { model, metrics: Metrics { history, eval } })
}

/// One run per seed, distributed over the worker pool. Each run is
/// internally sequential, so results do not depend on the schedule.
pub fn run_seeds<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    seeds: &[u64],
    exec: Exec,
) -> Vec<Result<Metrics>> {
    exec.map(seeds.to_vec(), |seed| {
        let cfg = TrainConfig { master_seed: seed, ..cfg.clone() };
        run_experiment::<T>(model_cfg, &cfg, train_set, test_set, Exec::Sequential).map(|r| r.metrics)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Additive noise std; `None` for the pure-noise reference.
    pub sigma: Option<f64>,
    pub overall_acc: f64,
    pub minority_group_acc: f64,
    pub seed_count: usize,
}

/// Trains with additive Gaussian noise of each `sigma` in place of pure
/// noise images, then once more with pure noise. Rows are sorted by
/// ascending sigma, the pure-noise row last.
pub fn additive_noise_sweep<T: Scalar>(
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    sigmas: &[f64],
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    let mut sorted = sigmas.to_vec();
    if sorted.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(crate::Error::invalid("sigma values must be finite and nonnegative"));
    }
    sorted.sort_by(f64::total_cmp);
    let levels: Vec<Option<f64>> = sorted.into_iter().map(Some).chain([None]).collect();
    let jobs: Vec<(usize, u64)> = (0..levels.len()).flat_map(|l| seeds.iter().map(move |&s| (l, s))).collect();
    let results = exec.map(jobs, |(l, seed)| {
        let mut cfg = base.clone();
        cfg.master_seed = seed;
        cfg.open.noise = match levels[l] {
            Some(sigma) => NoiseKind::Additive { sigma },
            None => NoiseKind::Pure,
        };
        run_experiment::<T>(model_cfg, &cfg, train_set, test_set, Exec::Sequential).map(|r| (l, r.metrics.eval))
    });
    let mut acc = vec![(0.0, 0.0); levels.len()];
    for r in results {
        let (l, eval) = r?;
        acc[l].0 += eval.overall_accuracy;
        acc[l].1 += eval.minority_group_accuracy().unwrap_or(0.0);
    }
    let n = seeds.len().max(1) as f64;
    Ok(levels
        .into_iter()
        .zip(acc)
        .map(|(sigma, (o, m))| SweepRow {
            sigma,
            overall_acc: o / n,
            minority_group_acc: m / n,
            seed_count: seeds.len(),
        })
        .collect())
}

/// Mean of the per-channel standard deviations of `d`.
pub fn dataset_std(d: &Dataset) -> Result<f64> {
    let s = channel_stats(d)?;
    Ok(s.std.iter().sum::<f64>() / s.std.len() as f64)
}
