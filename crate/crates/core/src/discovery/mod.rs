//! The propose-validate-evaluate loop that searches for new objectives with
//! a chat model.
//!
//! Each generation asks the model for a JSON object `{thought, name, code}`
//! whose `code` is an objective-language program, validates it, trains a
//! policy with it on a synthetic task and reports the resulting fitness
//! back into the conversation.

mod candidate;
mod engine;
mod prompts;
mod provider;
mod replay;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use candidate::{parse_candidate, validate_candidate, ParseFailure, ParsedCandidate};
pub use engine::{
    evaluate_objective, measure_burn_in, run_discovery, run_discovery_with_snapshot,
    DiscoveryError, DiscoveryRun, StopReason, ARCHIVE_FILE, CONFIG_FILE,
};
pub use prompts::{
    build_burn_in_context, feedback_message, replay_burn_in, BurnInEntry, ContextMode, Outcome,
};
pub use provider::{
    ChatProvider, HttpProvider, MockProvider, ProviderError, ProviderSettings, API_KEY_ENV,
};
pub use replay::{check_replay, parse_run_log, ReplayReport, RunLogEntry, RUN_LOG};

use crate::loss_catalog::LossId;
use crate::preference_sim::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Valid,
    ParseError,
    ValidationError,
    Diverged,
}

impl fmt::Display for CandidateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CandidateStatus::Valid => "valid",
            CandidateStatus::ParseError => "parse_error",
            CandidateStatus::ValidationError => "validation_error",
            CandidateStatus::Diverged => "diverged",
        })
    }
}

/// One evaluated proposal. `fitness` is set exactly when `status` is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub generation: usize,
    pub name: String,
    pub thought: String,
    pub code: String,
    pub status: CandidateStatus,
    pub error: Option<String>,
    pub fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Archive {
    pub burn_in: Vec<BurnInEntry>,
    pub records: Vec<CandidateRecord>,
}

impl Archive {
    /// Highest-fitness valid record; the earliest wins a tie.
    pub fn best(&self) -> Option<&CandidateRecord> {
        self.records
            .iter()
            .filter(|r| r.status == CandidateStatus::Valid)
            .fold(None, |best: Option<&CandidateRecord>, r| match (best, r.fitness) {
                (Some(b), Some(f)) if f <= b.fitness.unwrap_or(f64::NEG_INFINITY) => Some(b),
                (_, Some(_)) => Some(r),
                (b, None) => b,
            })
    }

    /// JSON Lines, one record per line.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextOrder {
    /// The conversation grows by one exchange per query.
    #[default]
    Chronological,
    /// Each query sees the system prompt plus one user message listing the
    /// best `top_k` results so far (burn-in included), best first.
    TopKSorted,
}

/// Synthetic task and dataset used to score candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSettings {
    pub seed: u64,
    pub n_contexts: usize,
    pub n_completions: usize,
    pub reward_scale: f64,
    pub n_pairs: usize,
    pub data_seed: u64,
}

impl Default for TaskSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            n_contexts: 8,
            n_completions: 16,
            reward_scale: 5.0,
            n_pairs: 4096,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscoveryConfig {
    pub max_generations: usize,
    pub max_resamples: usize,
    /// Stop once the best fitness has not improved for this many
    /// generations. Off when absent.
    pub early_stop_patience: Option<usize>,
    pub context_order: ContextOrder,
    pub top_k: usize,
    pub temperature: f64,
    pub provider: ProviderSettings,
    pub task: TaskSettings,
    pub train: TrainConfig,
    pub burn_in: Vec<LossId>,
    /// Seeds the validation probe batch.
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            max_generations: 10,
            max_resamples: 3,
            early_stop_patience: None,
            context_order: ContextOrder::Chronological,
            top_k: 8,
            temperature: 1.0,
            provider: ProviderSettings::default(),
            task: TaskSettings::default(),
            train: TrainConfig {
                beta: 0.05,
                ..TrainConfig::default()
            },
            burn_in: vec![LossId::Dpo, LossId::Slic, LossId::Ipo, LossId::KtoPair],
            seed: 0,
        }
    }
}
