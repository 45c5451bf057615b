use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::candidate::{parse_candidate, validate_candidate};
use super::prompts::{
    build_burn_in_context, feedback_message, results_message, system_prompt, BurnInEntry,
    ContextMode, Outcome,
};
use super::provider::ChatProvider;
use super::{Archive, CandidateRecord, CandidateStatus, ChatMessage, ContextOrder, DiscoveryConfig};
use crate::loss_catalog::{LossId, Variant};
use crate::objective_dsl::{builtin_source, Objective};
use crate::preference_sim::{
    fitness, make_task, sample_preference_dataset, train_policy, PreferenceDataset, SimError,
    SyntheticTask, TrainConfig, TrainError,
};

pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("invalid discovery config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("burn-in objective `{name}` failed: {source}")]
    BurnIn { name: String, source: TrainError },
    #[error("training failed: {0}")]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxGenerations,
    EarlyStop,
    /// The provider failed; the archive holds everything evaluated before.
    ProviderError(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryRun {
    pub archive: Archive,
    /// Every message in the order it was produced, starting with the
    /// burn-in context.
    pub transcript: Vec<ChatMessage>,
    pub stop: StopReason,
}

/// Trains `objective` on the task and returns the fitness of the result.
pub fn evaluate_objective(
    task: &SyntheticTask,
    dataset: &PreferenceDataset,
    objective: &Objective,
    cfg: &TrainConfig,
) -> Result<f64, TrainError> {
    let (policy, _) = train_policy(task, dataset, objective, cfg)?;
    Ok(fitness(task, &policy)?)
}

/// Scores each burn-in objective with the same trainer used for candidates.
pub fn measure_burn_in(
    ids: &[LossId],
    task: &SyntheticTask,
    dataset: &PreferenceDataset,
    cfg: &TrainConfig,
) -> Result<Vec<BurnInEntry>, DiscoveryError> {
    ids.iter()
        .map(|&id| {
            let objective = Objective::catalog(id);
            let fitness = evaluate_objective(task, dataset, &objective, cfg)
                .map_err(|source| DiscoveryError::BurnIn { name: id.to_string(), source })?;
            Ok(BurnInEntry {
                name: id.to_string(),
                source: builtin_source(id, Variant::BetaCorrected),
                fitness,
            })
        })
        .collect()
}

fn validate_config(cfg: &DiscoveryConfig) -> Result<(), DiscoveryError> {
    let bad = |m: &str| Err(DiscoveryError::InvalidConfig(m.to_owned()));
    if cfg.burn_in.is_empty() {
        return bad("burn_in must list at least one objective");
    }
    if cfg.top_k == 0 {
        return bad("top_k must be positive");
    }
    if cfg.early_stop_patience == Some(0) {
        return bad("early_stop_patience must be positive");
    }
    if !(cfg.temperature >= 0.0 && cfg.temperature.is_finite()) {
        return bad("temperature must be non-negative");
    }
    Ok(())
}

struct Sink {
    archive: File,
}

impl Sink {
    fn create(dir: &Path, snapshot: &serde_json::Value) -> Result<Self, DiscoveryError> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(snapshot)?;
        text.push('\n');
        fs::write(dir.join(CONFIG_FILE), text)?;
        File::create(dir.join(ARCHIVE_FILE))?;
        let archive = OpenOptions::new().append(true).open(dir.join(ARCHIVE_FILE))?;
        Ok(Self { archive })
    }

    fn append(&mut self, record: &CandidateRecord) -> Result<(), DiscoveryError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.archive.write_all(line.as_bytes())?;
        self.archive.flush()?;
        Ok(())
    }
}

/// System prompt plus the best `top_k` results so far, best first.
fn top_k_context(system: &ChatMessage, archive: &Archive, k: usize) -> Vec<ChatMessage> {
    let mut entries: Vec<(&str, f64)> = archive
        .burn_in
        .iter()
        .map(|e| (e.source.as_str(), e.fitness))
        .chain(
            archive
                .records
                .iter()
                .filter_map(|r| r.fitness.map(|f| (r.code.as_str(), f))),
        )
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1));
    entries.truncate(k);
    vec![system.clone(), ChatMessage::user(results_message(entries))]
}

/// Runs the loop and writes `run_config.json` (a snapshot of `cfg`) and
/// `archive.jsonl` into `out_dir` when given.
pub fn run_discovery(
    provider: &mut dyn ChatProvider,
    cfg: &DiscoveryConfig,
    out_dir: Option<&Path>,
) -> Result<DiscoveryRun, DiscoveryError> {
    let snapshot = serde_json::to_value(cfg)?;
    run_discovery_with_snapshot(provider, cfg, out_dir.map(|d| (d, &snapshot)))
}

/// As [`run_discovery`], with a caller-supplied config snapshot.
pub fn run_discovery_with_snapshot(
    provider: &mut dyn ChatProvider,
    cfg: &DiscoveryConfig,
    out: Option<(&Path, &serde_json::Value)>,
) -> Result<DiscoveryRun, DiscoveryError> {
    validate_config(cfg)?;
    let t = &cfg.task;
    let task = make_task(t.seed, t.n_contexts, t.n_completions, t.reward_scale)?;
    let dataset = sample_preference_dataset(&task, t.n_pairs, t.data_seed)?;
    let mut sink = out.map(|(dir, snap)| Sink::create(dir, snap)).transpose()?;

    let burn_in = measure_burn_in(&cfg.burn_in, &task, &dataset, &cfg.train)?;
    let example = builtin_source(LossId::Dpo, Variant::BetaCorrected);
    let mut transcript =
        build_burn_in_context(&burn_in, ContextMode::Dsl, &example).expect("burn-in checked non-empty");
    let system = ChatMessage::system(system_prompt(ContextMode::Dsl, &example));
    let mut archive = Archive { burn_in, records: Vec::new() };

    let mut best = f64::NEG_INFINITY;
    let mut stale = 0usize;
    for generation in 0..cfg.max_generations {
        let mut exchanges: Vec<ChatMessage> = Vec::new();
        for _ in 0..=cfg.max_resamples {
            let query = match cfg.context_order {
                ContextOrder::Chronological => transcript.clone(),
                ContextOrder::TopKSorted => {
                    let mut q = top_k_context(&system, &archive, cfg.top_k);
                    q.extend(exchanges.iter().cloned());
                    q
                }
            };
            let response = match provider.chat(&query, cfg.temperature) {
                Ok(r) => r,
                Err(e) => {
                    return Ok(DiscoveryRun {
                        archive,
                        transcript,
                        stop: StopReason::ProviderError(e.to_string()),
                    })
                }
            };
            let record = assess(generation, &response, cfg, &task, &dataset)?;
            let outcome = match (record.fitness, &record.error) {
                (Some(f), _) => Outcome::Fitness(f),
                (None, Some(e)) => Outcome::Error(e.clone()),
                (None, None) => unreachable!("failed records carry an error"),
            };
            let exchange = [ChatMessage::assistant(response), feedback_message(&outcome)];
            transcript.extend(exchange.iter().cloned());
            exchanges.extend(exchange);
            if let Some(s) = sink.as_mut() {
                s.append(&record)?;
            }
            let valid = record.status == CandidateStatus::Valid;
            archive.records.push(record);
            if valid {
                break;
            }
        }

        let current = archive.best().and_then(|r| r.fitness).unwrap_or(f64::NEG_INFINITY);
        if current > best {
            best = current;
            stale = 0;
        } else {
            stale += 1;
        }
        if cfg.early_stop_patience.is_some_and(|p| stale >= p) {
            return Ok(DiscoveryRun { archive, transcript, stop: StopReason::EarlyStop });
        }
    }
    Ok(DiscoveryRun { archive, transcript, stop: StopReason::MaxGenerations })
}

/// Parses, validates and scores one response.
fn assess(
    generation: usize,
    response: &str,
    cfg: &DiscoveryConfig,
    task: &SyntheticTask,
    dataset: &PreferenceDataset,
) -> Result<CandidateRecord, DiscoveryError> {
    let mut record = CandidateRecord {
        generation,
        name: String::new(),
        thought: String::new(),
        code: String::new(),
        status: CandidateStatus::ParseError,
        error: None,
        fitness: None,
    };
    let parsed = match parse_candidate(response) {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e.to_string());
            return Ok(record);
        }
    };
    record.name = parsed.name;
    record.thought = parsed.thought;
    record.code = parsed.code;
    record.status = CandidateStatus::ValidationError;

    let program = match validate_candidate(&record.code, cfg.train.batch_size, cfg.seed, cfg.train.beta) {
        Ok(p) => p,
        Err(e) => {
            record.error = Some(e);
            return Ok(record);
        }
    };
    let objective = Objective::Program {
        name: record.name.clone(),
        program: Arc::new(program),
    };
    match evaluate_objective(task, dataset, &objective, &cfg.train) {
        Ok(f) => {
            record.status = CandidateStatus::Valid;
            record.fitness = Some(f);
        }
        Err(TrainError::Divergence(d)) => {
            record.status = CandidateStatus::Diverged;
            record.error = Some(d.to_string());
        }
        Err(TrainError::Objective(e)) => record.error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    Ok(record)
}
