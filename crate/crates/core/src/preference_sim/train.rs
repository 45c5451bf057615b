use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{batch_logps, PolicyTable, PreferenceDataset, SimError, SimRng, Split, SyntheticTask};
use crate::batch_math::{CompGraph, MathError};
use crate::objective_dsl::{DslError, Objective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Adam with `(0.9, 0.999, 1e-8)`.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub beta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 200,
            batch_size: 256,
            seed: 0,
            optimizer: Optimizer::Adam,
            beta: 0.1,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        Ok(())
    }
}

/// A non-finite loss, gradient or parameter during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("training diverged at epoch {epoch}, step {step}")]
pub struct DivergenceError {
    /// Zero-based epoch.
    pub epoch: usize,
    /// Zero-based optimizer step counted across epochs.
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Divergence(#[from] DivergenceError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset has no training pairs")]
    EmptyTrainSplit,
    #[error(transparent)]
    Objective(#[from] DslError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<MathError> for TrainError {
    fn from(e: MathError) -> Self {
        TrainError::Objective(DslError::Math(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
    pub steps: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Mean loss over `records` and its gradient with respect to the policy
/// logits (chained through the row log-softmax).
pub(crate) fn loss_and_logit_grad(
    policy: &PolicyTable,
    task: &SyntheticTask,
    records: &[super::PreferenceRecord],
    objective: &Objective,
    beta: f64,
) -> Result<(f64, Option<Vec<f64>>), TrainError> {
    let batch = batch_logps(policy, &task.reference, records)?;
    let mut g = CompGraph::new();
    let leaves = batch.add_leaves(&mut g);
    let out = objective.build(&mut g, &leaves, beta)?;
    let mean = g.mean(out)?;
    let loss = g.value(mean).as_scalar().expect("mean is scalar");
    if !loss.is_finite() {
        return Ok((loss, None));
    }
    let grads = g.gradient(mean, &["pcl", "prl"])?;
    let (gw, gl) = (&grads["pcl"], &grads["prl"]);

    let v = task.n_completions;
    let mut out = vec![0.0; policy.logits().len()];
    let probs: Vec<Vec<f64>> = (0..task.n_contexts).map(|x| policy.probs(x)).collect();
    for (i, r) in records.iter().enumerate() {
        let row = &mut out[r.context * v..(r.context + 1) * v];
        for (y, d) in [(r.chosen, gw[i]), (r.rejected, gl[i])] {
            if d == 0.0 {
                continue;
            }
            row[y] += d;
            for (o, p) in row.iter_mut().zip(&probs[r.context]) {
                *o -= d * p;
            }
        }
    }
    if out.iter().any(|x| !x.is_finite()) {
        return Ok((loss, None));
    }
    Ok((loss, Some(out)))
}

/// Minimizes the mean objective over the training split, starting from the
/// reference logits. Deterministic for a fixed config.
pub fn train_policy(
    task: &SyntheticTask,
    dataset: &PreferenceDataset,
    objective: &Objective,
    cfg: &TrainConfig,
) -> Result<(PolicyTable, TrainTrace), TrainError> {
    cfg.validate()?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSplit);
    }
    let mut policy = task.reference.clone();
    let mut trace = TrainTrace::default();
    let mut adam = Adam::new(policy.logits().len());
    let mut rng = SimRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.index(i + 1);
            order.swap(i, j);
        }
        let mut weighted = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let records: Vec<_> = chunk.iter().map(|&k| train[k]).collect();
            let diverged = DivergenceError { epoch, step };
            let (loss, grad) = loss_and_logit_grad(&policy, task, &records, objective, cfg.beta)?;
            let grad = grad.ok_or(diverged)?;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in policy.logits_mut().iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
                Optimizer::Adam => adam.step(policy.logits_mut(), &grad, cfg.learning_rate),
            }
            if policy.logits().iter().any(|p| !p.is_finite()) {
                return Err(diverged.into());
            }
            weighted += loss * records.len() as f64;
            seen += records.len();
            step += 1;
        }
        trace.epochs.push(EpochLoss {
            epoch,
            mean_loss: weighted / seen as f64,
        });
    }
    trace.steps = step;
    Ok((policy, trace))
}

pub fn write_trace_csv<W: Write>(out: W, trace: &TrainTrace) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if trace.epochs.is_empty() {
        w.write_record(["epoch", "mean_loss"])?;
    }
    for e in &trace.epochs {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
