use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    expected_reward, kl_divergence, sample_preference_dataset, train_policy, DivergenceError,
    SyntheticTask, TrainConfig, TrainError,
};
use crate::objective_dsl::Objective;

/// One trained `(beta, seed)` cell. Metrics are absent when training
/// diverged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub objective: String,
    pub variant: String,
    pub beta: f64,
    pub seed: u64,
    pub expected_reward: Option<f64>,
    pub kl: Option<f64>,
    pub diverged: bool,
    #[serde(skip)]
    pub divergence: Option<DivergenceError>,
}

/// Trains one policy per `(beta, seed)` pair. Each seed drives both the
/// dataset draw and the shuffle. Rows are ordered beta-major, then by seed,
/// regardless of which cell finishes first. A divergence is recorded in its
/// row; any other error aborts the sweep.
pub fn frontier_sweep(
    task: &SyntheticTask,
    objective: &Objective,
    betas: &[f64],
    seeds: &[u64],
    n_pairs: usize,
    cfg: &TrainConfig,
) -> Result<Vec<FrontierPoint>, TrainError> {
    let cells: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|&b| seeds.iter().map(move |&s| (b, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(beta, seed)| {
            let dataset = sample_preference_dataset(task, n_pairs, seed)?;
            let run_cfg = TrainConfig { beta, seed, ..*cfg };
            let mut point = FrontierPoint {
                objective: objective.name(),
                variant: objective.variant_label().to_owned(),
                beta,
                seed,
                expected_reward: None,
                kl: None,
                diverged: false,
                divergence: None,
            };
            match train_policy(task, &dataset, objective, &run_cfg) {
                Ok((policy, _)) => {
                    point.expected_reward = Some(expected_reward(&policy, task)?);
                    point.kl = Some(kl_divergence(&policy, task)?);
                }
                Err(TrainError::Divergence(d)) => {
                    point.diverged = true;
                    point.divergence = Some(d);
                }
                Err(e) => return Err(e),
            }
            Ok(point)
        })
        .collect()
}

pub fn write_frontier_csv<W: Write>(out: W, points: &[FrontierPoint]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if points.is_empty() {
        w.write_record([
            "objective",
            "variant",
            "beta",
            "seed",
            "expected_reward",
            "kl",
            "diverged",
        ])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}
