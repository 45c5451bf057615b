//! A tabular preference-alignment environment.
//!
//! A [`SyntheticTask`] holds a ground-truth reward table and reference
//! logits over `C` contexts and `V` completions. Preference pairs are drawn
//! from the reference policy and labelled by a Bradley-Terry rater; a
//! [`PolicyTable`] is then trained on them with any
//! [`Objective`](crate::objective_dsl::Objective).
//!
//! # Random streams
//!
//! All randomness comes from SplitMix64 seeded directly with the user seed.
//! A uniform draw is `(next_u64 >> 11) * 2^-53`. A normal draw consumes two
//! uniforms `u1, u2` and returns `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`.
//!
//! * [`make_task`]: `C*V` uniforms for the reward table (row-major), then
//!   `C*V` normals for the reference logits (row-major).
//! * [`sample_preference_dataset`]: per pair, one uniform for the context,
//!   one for `y1`, one per attempt for `y2` (redrawn until `y2 != y1`), then
//!   one for the label. Completions are drawn by inverse CDF over the
//!   reference row.
//! * [`train_policy`]: one generator seeded with the config seed drives a
//!   Fisher-Yates shuffle of the training indices at the start of each
//!   epoch (`j = floor(u * (i + 1))` for `i` from `n - 1` down to `1`).

mod frontier;
mod train;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch_math::sigmoid;
use crate::loss_catalog::PreferenceBatch;

pub use frontier::{frontier_sweep, write_frontier_csv, FrontierPoint};
pub use train::{
    train_policy, write_trace_csv, DivergenceError, EpochLoss, Optimizer, TrainConfig, TrainError,
    TrainTrace,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("need at least 2 contexts and 2 completions, got {contexts}x{completions}")]
    TooSmall { contexts: usize, completions: usize },
    #[error("reward scale must be finite and non-negative, got {0}")]
    InvalidRewardScale(f64),
    #[error("need at least one preference pair")]
    NoPairs,
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("policy shape {got:?} does not match task shape {want:?}")]
    ShapeMismatch { got: (usize, usize), want: (usize, usize) },
    #[error("logits must be finite")]
    NonFiniteLogits,
    #[error("record {index} is out of range")]
    RecordOutOfRange { index: usize },
}

/// The pinned generator.
#[derive(Debug, Clone)]
pub struct SimRng(SplitMix64);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by the cosine branch of Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Index in `0..n` from one uniform draw.
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Inverse-CDF draw from a probability row.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

/// Row-major logits over `contexts x completions`; each row defines a
/// softmax distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    contexts: usize,
    completions: usize,
    logits: Vec<f64>,
}

impl PolicyTable {
    pub fn new(contexts: usize, completions: usize, logits: Vec<f64>) -> Result<Self, SimError> {
        if logits.len() != contexts * completions {
            return Err(SimError::ShapeMismatch {
                got: (logits.len(), 1),
                want: (contexts, completions),
            });
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(SimError::NonFiniteLogits);
        }
        Ok(Self {
            contexts,
            completions,
            logits,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.contexts, self.completions)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub(crate) fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.logits[x * self.completions..(x + 1) * self.completions]
    }

    /// Exact log-softmax of row `x`.
    pub fn log_probs(&self, x: usize) -> Vec<f64> {
        let row = self.row(x);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        row.iter().map(|l| l - lse).collect()
    }

    pub fn probs(&self, x: usize) -> Vec<f64> {
        self.log_probs(x).into_iter().map(f64::exp).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub seed: u64,
    pub n_contexts: usize,
    pub n_completions: usize,
    /// Row-major ground-truth rewards.
    pub reward_table: Vec<f64>,
    pub reference: PolicyTable,
}

impl SyntheticTask {
    pub fn reward(&self, x: usize, y: usize) -> f64 {
        self.reward_table[x * self.n_completions + y]
    }

    pub fn reward_row(&self, x: usize) -> &[f64] {
        &self.reward_table[x * self.n_completions..(x + 1) * self.n_completions]
    }

    fn check_policy(&self, policy: &PolicyTable) -> Result<(), SimError> {
        let want = (self.n_contexts, self.n_completions);
        if policy.shape() != want {
            return Err(SimError::ShapeMismatch {
                got: policy.shape(),
                want,
            });
        }
        Ok(())
    }
}

pub fn make_task(
    seed: u64,
    n_contexts: usize,
    n_completions: usize,
    reward_scale: f64,
) -> Result<SyntheticTask, SimError> {
    if n_contexts < 2 || n_completions < 2 {
        return Err(SimError::TooSmall {
            contexts: n_contexts,
            completions: n_completions,
        });
    }
    if !(reward_scale >= 0.0 && reward_scale.is_finite()) {
        return Err(SimError::InvalidRewardScale(reward_scale));
    }
    let cells = n_contexts * n_completions;
    let mut rng = SimRng::new(seed);
    let reward_table = (0..cells).map(|_| rng.uniform() * reward_scale).collect();
    let logits = (0..cells).map(|_| rng.normal()).collect();
    Ok(SyntheticTask {
        seed,
        n_contexts,
        n_completions,
        reward_table,
        reference: PolicyTable::new(n_contexts, n_completions, logits)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub context: usize,
    pub chosen: usize,
    pub rejected: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub records: Vec<PreferenceRecord>,
}

impl PreferenceDataset {
    pub fn split(&self, split: Split) -> Vec<PreferenceRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .copied()
            .collect()
    }
}

/// Fraction of pairs placed in the training split.
pub const TRAIN_FRACTION: f64 = 0.9;

pub fn sample_preference_dataset(
    task: &SyntheticTask,
    n_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset, SimError> {
    if n_pairs == 0 {
        return Err(SimError::NoPairs);
    }
    let probs: Vec<Vec<f64>> = (0..task.n_contexts).map(|x| task.reference.probs(x)).collect();
    let n_train = (TRAIN_FRACTION * n_pairs as f64).round() as usize;
    let mut rng = SimRng::new(seed);
    let records = (0..n_pairs)
        .map(|i| {
            let x = rng.index(task.n_contexts);
            let y1 = rng.categorical(&probs[x]);
            let mut y2 = rng.categorical(&probs[x]);
            while y2 == y1 {
                y2 = rng.categorical(&probs[x]);
            }
            let p_first = sigmoid(task.reward(x, y1) - task.reward(x, y2));
            let (chosen, rejected) = if rng.uniform() < p_first { (y1, y2) } else { (y2, y1) };
            PreferenceRecord {
                context: x,
                chosen,
                rejected,
                split: if i < n_train { Split::Train } else { Split::Heldout },
            }
        })
        .collect();
    Ok(PreferenceDataset { records })
}

/// The four log-probability vectors for `records` under `policy` and
/// `reference`.
pub fn batch_logps(
    policy: &PolicyTable,
    reference: &PolicyTable,
    records: &[PreferenceRecord],
) -> Result<PreferenceBatch, SimError> {
    let (c, v) = reference.shape();
    if policy.shape() != (c, v) {
        return Err(SimError::ShapeMismatch {
            got: policy.shape(),
            want: (c, v),
        });
    }
    if let Some(index) = records
        .iter()
        .position(|r| r.context >= c || r.chosen >= v || r.rejected >= v)
    {
        return Err(SimError::RecordOutOfRange { index });
    }
    let pol: Vec<Vec<f64>> = (0..c).map(|x| policy.log_probs(x)).collect();
    let reff: Vec<Vec<f64>> = (0..c).map(|x| reference.log_probs(x)).collect();
    let pick = |t: &[Vec<f64>], f: fn(&PreferenceRecord) -> usize| -> Vec<f64> {
        records.iter().map(|r| t[r.context][f(r)]).collect()
    };
    PreferenceBatch::new(
        pick(&pol, |r| r.chosen),
        pick(&pol, |r| r.rejected),
        pick(&reff, |r| r.chosen),
        pick(&reff, |r| r.rejected),
    )
    .map_err(|_| SimError::NonFiniteLogits)
}

/// `(1/C) sum_x sum_y pi(y|x) r*(x, y)`.
pub fn expected_reward(policy: &PolicyTable, task: &SyntheticTask) -> Result<f64, SimError> {
    task.check_policy(policy)?;
    let total: f64 = (0..task.n_contexts)
        .map(|x| {
            policy
                .probs(x)
                .iter()
                .zip(task.reward_row(x))
                .map(|(p, r)| p * r)
                .sum::<f64>()
        })
        .sum();
    Ok(total / task.n_contexts as f64)
}

/// `(1/C) sum_x KL(pi(.|x) || pi_ref(.|x))`.
pub fn kl_divergence(policy: &PolicyTable, task: &SyntheticTask) -> Result<f64, SimError> {
    task.check_policy(policy)?;
    let total: f64 = (0..task.n_contexts)
        .map(|x| row_kl(&policy.log_probs(x), &task.reference.log_probs(x)))
        .sum();
    Ok(total / task.n_contexts as f64)
}

/// KL between two distributions given by their log-probabilities.
pub fn row_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(lp, lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum::<f64>()
        .max(0.0)
}

/// The KL-regularized optimum `pi*(y|x) ∝ pi_ref(y|x) exp(r*(x,y) / beta)`,
/// held as logits `ref_logits + r / beta`.
pub fn analytic_optimum(task: &SyntheticTask, beta: f64) -> Result<PolicyTable, SimError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(SimError::InvalidBeta(beta));
    }
    let logits = task
        .reference
        .logits()
        .iter()
        .zip(&task.reward_table)
        .map(|(l, r)| l + r / beta)
        .collect();
    PolicyTable::new(task.n_contexts, task.n_completions, logits)
        .map_err(|_| SimError::InvalidBeta(beta))
}

/// Point mass on the best completion of every context.
pub fn argmax_policy(task: &SyntheticTask) -> PolicyTable {
    let mut logits = vec![0.0; task.reward_table.len()];
    for x in 0..task.n_contexts {
        let row = task.reward_row(x);
        let best = (0..row.len())
            .fold(0, |b, y| if row[y] > row[b] { y } else { b });
        for (y, l) in logits[x * task.n_completions..(x + 1) * task.n_completions]
            .iter_mut()
            .enumerate()
        {
            *l = if y == best { 0.0 } else { -800.0 };
        }
    }
    PolicyTable::new(task.n_contexts, task.n_completions, logits).expect("finite logits")
}

/// The downstream score of a trained policy: its exact expected
/// ground-truth reward over all contexts.
pub fn fitness(task: &SyntheticTask, policy: &PolicyTable) -> Result<f64, SimError> {
    expected_reward(policy, task)
}
