use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use objective_lab::discovery::{
    ContextOrder, DiscoveryConfig, ProviderSettings, TaskSettings,
};
use objective_lab::loss_catalog::{LossId, Variant};
use objective_lab::preference_sim::{Optimizer, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Http,
    Mock,
}

/// Every tunable of every subcommand in one flat document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub loss: LossId,
    pub variant: Variant,
    /// Objective-language source file used instead of `loss` when set.
    pub objective_file: Option<PathBuf>,
    pub beta: f64,
    pub betas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub seed: u64,

    pub task_seed: u64,
    pub n_contexts: usize,
    pub n_completions: usize,
    pub reward_scale: f64,
    pub pairs: usize,
    pub data_seed: u64,

    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,

    pub interval: [f64; 2],
    pub grid_n: usize,
    pub tol: f64,
    pub sweep_points: usize,

    pub max_generations: usize,
    pub max_resamples: usize,
    pub early_stop_patience: Option<usize>,
    pub context_order: ContextOrder,
    pub top_k: usize,
    pub temperature: f64,
    pub burn_in: Vec<LossId>,
    pub provider: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub backoff_ms: u64,
    pub script: Option<PathBuf>,

    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let task = TaskSettings::default();
        let disc = DiscoveryConfig::default();
        let prov = ProviderSettings::default();
        Self {
            loss: LossId::Dpo,
            variant: Variant::default(),
            objective_file: None,
            beta: 0.05,
            betas: vec![0.025, 0.05, 0.1, 0.25, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            seed: 0,
            task_seed: task.seed,
            n_contexts: task.n_contexts,
            n_completions: task.n_completions,
            reward_scale: task.reward_scale,
            pairs: task.n_pairs,
            data_seed: task.data_seed,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            optimizer: train.optimizer,
            interval: [-10.0, 10.0],
            grid_n: 10_001,
            tol: 1e-10,
            sweep_points: 101,
            max_generations: disc.max_generations,
            max_resamples: disc.max_resamples,
            early_stop_patience: disc.early_stop_patience,
            context_order: disc.context_order,
            top_k: disc.top_k,
            temperature: disc.temperature,
            burn_in: disc.burn_in,
            provider: ProviderKind::default(),
            endpoint: prov.endpoint,
            model: prov.model,
            timeout_secs: prov.timeout_secs,
            max_retries: prov.max_retries,
            backoff_ms: prov.backoff_ms,
            script: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            optimizer: self.optimizer,
            beta: self.beta,
        }
    }

    pub fn task(&self) -> TaskSettings {
        TaskSettings {
            seed: self.task_seed,
            n_contexts: self.n_contexts,
            n_completions: self.n_completions,
            reward_scale: self.reward_scale,
            n_pairs: self.pairs,
            data_seed: self.data_seed,
        }
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            max_generations: self.max_generations,
            max_resamples: self.max_resamples,
            early_stop_patience: self.early_stop_patience,
            context_order: self.context_order,
            top_k: self.top_k,
            temperature: self.temperature,
            provider: ProviderSettings {
                endpoint: self.endpoint.clone(),
                model: self.model.clone(),
                timeout_secs: self.timeout_secs,
                max_retries: self.max_retries,
                backoff_ms: self.backoff_ms,
            },
            task: self.task(),
            train: self.train(),
            burn_in: self.burn_in.clone(),
            seed: self.seed,
        }
    }

    pub fn write_snapshot(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("run_config.json"), self.to_json()?)?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
