mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use objective_lab::loss_catalog::{LossId, Variant};

use config::{ProviderKind, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "objlab", version, about = "Preference-optimization objectives: evaluate, analyze, train, sweep and discover")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a loss at given log-ratio differences or on a batch file.
    EvalLoss(EvalLossArgs),
    /// Stationary points, convexity segments and a beta sweep of a pointwise loss.
    Analyze(Overrides),
    /// Train one policy and report reward and KL.
    Train(Overrides),
    /// Train across betas and seeds and write the reward/KL frontier.
    Sweep(Overrides),
    /// Run the proposal loop against a chat model or a scripted mock.
    Discover(Overrides),
    /// Check the bundled discovery transcript against the parser and feedback templates.
    Replay(ReplayArgs),
}

/// Values here override the config file, which overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    loss: Option<LossId>,
    #[arg(long)]
    variant: Option<Variant>,
    /// Objective-language source file to use instead of --loss.
    #[arg(long)]
    objective_file: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_generations: Option<usize>,
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Mock provider script: one JSON string per line.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalLossArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Log-ratio differences, comma separated or repeated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    rho: Vec<f64>,
    /// Policy log-probabilities `chosen,rejected` (pfl only).
    #[arg(long, value_delimiter = ',', num_args = 1, allow_hyphen_values = true)]
    policy_logps: Option<Vec<f64>>,
    /// CSV with columns pcl,prl,rcl,rrl for batch evaluation.
    #[arg(long, conflicts_with = "rho")]
    batch: Option<PathBuf>,
    /// Also print df/drho.
    #[arg(long)]
    grad: bool,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Transcript to check instead of the bundled one.
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Bad invocation input; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

impl Overrides {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| UsageError(format!("{e:#}")))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(loss, variant, beta, betas, seeds, seed, epochs, pairs, learning_rate, max_generations, provider);
        if self.objective_file.is_some() {
            c.objective_file = self.objective_file.clone();
        }
        if self.script.is_some() {
            c.script = self.script.clone();
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        Ok(c)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::EvalLoss(a) => {
            let cfg = a.overrides.resolve()?;
            let logps = match a.policy_logps.as_deref() {
                None => None,
                Some([c, r]) => Some((*c, *r)),
                Some(_) => return Err(UsageError("--policy-logps takes exactly two values".into()).into()),
            };
            commands::eval_loss(&cfg, &a.rho, logps, a.batch.as_deref(), a.grad)
        }
        Command::Analyze(o) => commands::analyze(&o.resolve()?),
        Command::Train(o) => commands::train(&o.resolve()?),
        Command::Sweep(o) => commands::sweep(&o.resolve()?),
        Command::Discover(o) => commands::discover(&o.resolve()?),
        Command::Replay(a) => commands::replay(a.log.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
