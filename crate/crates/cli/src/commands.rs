use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use objective_lab::discovery::{
    check_replay, parse_run_log, run_discovery_with_snapshot, ChatProvider, HttpProvider,
    MockProvider, StopReason, RUN_LOG,
};
use objective_lab::loss_catalog::analysis::{
    beta_sweep_table, convexity_profile, find_stationary_points, linspace, write_convexity_csv,
    write_sweep_csv, Interval,
};
use objective_lab::loss_catalog::{
    eval_loss_batch, LossId, LossParams, LossSpec, PointwiseLoss, PreferenceBatch,
};
use objective_lab::objective_dsl::{eval_program, grad_program, Objective};
use objective_lab::preference_sim::{
    analytic_optimum, expected_reward, frontier_sweep, kl_divergence, make_task,
    sample_preference_dataset, train_policy, write_frontier_csv, write_trace_csv, SyntheticTask,
};
use serde::{Deserialize, Serialize};

use crate::config::{ProviderKind, RunConfig};
use crate::UsageError;

fn params(cfg: &RunConfig) -> Result<LossParams> {
    Ok(LossParams::new(cfg.beta, cfg.variant)?)
}

fn pointwise(cfg: &RunConfig, logps: Option<(f64, f64)>) -> Result<PointwiseLoss> {
    let p = PointwiseLoss::new(cfg.loss, params(cfg)?)?;
    Ok(match logps {
        Some((c, r)) => p.with_policy_logps(c, r),
        None if cfg.loss == LossId::Pfl => p.with_indifferent_reference(),
        None => p,
    })
}

#[derive(Deserialize)]
struct BatchRow {
    pcl: f64,
    prl: f64,
    rcl: f64,
    rrl: f64,
}

fn read_batch(path: &Path) -> Result<PreferenceBatch> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows: Vec<BatchRow> = r.deserialize().collect::<Result<_, _>>()?;
    let col = |f: fn(&BatchRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(PreferenceBatch::new(col(|r| r.pcl), col(|r| r.prl), col(|r| r.rcl), col(|r| r.rrl))?)
}

pub fn eval_loss(
    cfg: &RunConfig,
    rho: &[f64],
    logps: Option<(f64, f64)>,
    batch: Option<&Path>,
    grad: bool,
) -> Result<()> {
    let mut out = io::stdout().lock();
    let program = match objective(cfg)? {
        Objective::Program { program, .. } => Some(program),
        Objective::Catalog { .. } => None,
    };
    if let Some(path) = batch {
        let batch = read_batch(path)?;
        let losses = match &program {
            Some(p) => eval_program(p, &batch, cfg.beta)?,
            None => eval_loss_batch(&LossSpec::of(cfg.loss), &params(cfg)?, &batch)?,
        };
        for v in losses.iter() {
            writeln!(out, "{v}")?;
        }
        return Ok(());
    }
    if rho.is_empty() {
        return Err(UsageError("eval-loss needs --rho or --batch".into()).into());
    }
    if let Some(p) = &program {
        if logps.is_some() {
            return Err(UsageError("--policy-logps cannot be combined with --objective-file".into()).into());
        }
        for &r in rho {
            let single = PreferenceBatch::from_rho(&[r])?;
            let v = eval_program(p, &single, cfg.beta)?;
            if v.len() != 1 {
                bail!("pointwise evaluation needs one loss per pair, the program returned {}", v.len());
            }
            if grad {
                writeln!(out, "{}\t{}", v[0], grad_program(p, &single, cfg.beta)?.pcl[0])?;
            } else {
                writeln!(out, "{}", v[0])?;
            }
        }
        return Ok(());
    }
    let f = pointwise(cfg, logps)?;
    for &r in rho {
        let v = f.value(r)?;
        if grad {
            writeln!(out, "{v}\t{}", f.derivative(r)?.value)?;
        } else {
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct StationaryRow {
    loss_id: LossId,
    variant: &'static str,
    beta: f64,
    rho: f64,
    value: f64,
    kind: objective_lab::loss_catalog::analysis::StationaryKind,
}

pub fn analyze(cfg: &RunConfig) -> Result<()> {
    if cfg.objective_file.is_some() {
        return Err(UsageError("analyze works on catalog losses; drop --objective-file".into()).into());
    }
    let f = pointwise(cfg, None)?;
    let interval = Interval::new(cfg.interval[0], cfg.interval[1])?;
    let points = find_stationary_points(&f, interval, cfg.grid_n, cfg.tol)?;
    let segments = convexity_profile(&f, interval, cfg.grid_n)?;

    let mut out = io::stdout().lock();
    writeln!(out, "stationary points of {} ({}, beta {}):", cfg.loss, cfg.variant.as_str(), cfg.beta)?;
    if points.is_empty() {
        writeln!(out, "  none")?;
    }
    for p in &points {
        writeln!(out, "  {:?} at rho = {}, f = {}", p.kind, p.rho, p.value)?;
    }
    writeln!(out, "convexity:")?;
    for s in &segments {
        writeln!(out, "  [{}, {}] {:?}", s.interval.lo, s.interval.hi, s.sign)?;
    }

    if let Some(dir) = &cfg.out {
        cfg.write_snapshot(dir)?;
        let mut w = csv::Writer::from_path(dir.join("stationary_points.csv"))?;
        if points.is_empty() {
            w.write_record(["loss_id", "variant", "beta", "rho", "value", "kind"])?;
        }
        for p in &points {
            w.serialize(StationaryRow {
                loss_id: cfg.loss,
                variant: cfg.variant.as_str(),
                beta: cfg.beta,
                rho: p.rho,
                value: p.value,
                kind: p.kind,
            })?;
        }
        w.flush()?;
        write_convexity_csv(File::create(dir.join("convexity.csv"))?, cfg.loss, &params(cfg)?, &segments)?;
        let grid = linspace(cfg.interval[0], cfg.interval[1], cfg.sweep_points);
        let rows = beta_sweep_table(cfg.loss, &cfg.betas, &grid, cfg.variant)?;
        write_sweep_csv(File::create(dir.join("beta_sweep.csv"))?, &rows)?;
        writeln!(out, "wrote {}", dir.display())?;
    }
    Ok(())
}

fn objective(cfg: &RunConfig) -> Result<Objective> {
    match &cfg.objective_file {
        Some(path) => {
            let src = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let name = path.file_stem().map_or("program".into(), |s| s.to_string_lossy().into_owned());
            Ok(Objective::from_source(name, &src)?)
        }
        None => Ok(Objective::Catalog { id: cfg.loss, variant: cfg.variant }),
    }
}

fn task(cfg: &RunConfig) -> Result<SyntheticTask> {
    Ok(make_task(cfg.task_seed, cfg.n_contexts, cfg.n_completions, cfg.reward_scale)?)
}

#[derive(Serialize)]
struct TrainMetrics {
    objective: String,
    beta: f64,
    expected_reward: f64,
    kl: f64,
    reference_reward: f64,
    optimum_reward: f64,
    optimum_kl: f64,
    steps: usize,
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let task = task(cfg)?;
    let data = sample_preference_dataset(&task, cfg.pairs, cfg.data_seed)?;
    let obj = objective(cfg)?;
    let (policy, trace) = train_policy(&task, &data, &obj, &cfg.train())?;
    let optimum = analytic_optimum(&task, cfg.beta)?;
    let m = TrainMetrics {
        objective: obj.name(),
        beta: cfg.beta,
        expected_reward: expected_reward(&policy, &task)?,
        kl: kl_divergence(&policy, &task)?,
        reference_reward: expected_reward(&task.reference, &task)?,
        optimum_reward: expected_reward(&optimum, &task)?,
        optimum_kl: kl_divergence(&optimum, &task)?,
        steps: trace.steps,
    };
    let mut out = io::stdout().lock();
    writeln!(out, "objective         {}", m.objective)?;
    writeln!(out, "expected_reward   {}", m.expected_reward)?;
    writeln!(out, "kl                {}", m.kl)?;
    writeln!(out, "reference_reward  {}", m.reference_reward)?;
    writeln!(out, "optimum_reward    {}", m.optimum_reward)?;
    writeln!(out, "optimum_kl        {}", m.optimum_kl)?;
    if let Some(dir) = &cfg.out {
        cfg.write_snapshot(dir)?;
        write_trace_csv(File::create(dir.join("trace.csv"))?, &trace)?;
        fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&m)? + "\n")?;
        writeln!(out, "wrote {}", dir.display())?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<()> {
    let task = task(cfg)?;
    let points = frontier_sweep(&task, &objective(cfg)?, &cfg.betas, &cfg.seeds, cfg.pairs, &cfg.train())?;
    match &cfg.out {
        Some(dir) => {
            cfg.write_snapshot(dir)?;
            write_frontier_csv(BufWriter::new(File::create(dir.join("frontier.csv"))?), &points)?;
            let diverged = points.iter().filter(|p| p.diverged).count();
            println!("{} runs, {} diverged; wrote {}", points.len(), diverged, dir.display());
        }
        None => write_frontier_csv(io::stdout().lock(), &points)?,
    }
    Ok(())
}

pub fn discover(cfg: &RunConfig) -> Result<()> {
    if cfg.objective_file.is_some() {
        return Err(UsageError("discover takes its seed objectives from burn_in, not --objective-file".into()).into());
    }
    let mut provider: Box<dyn ChatProvider> = match cfg.provider {
        ProviderKind::Mock => {
            let Some(script) = &cfg.script else {
                return Err(UsageError("--provider mock needs --script".into()).into());
            };
            Box::new(MockProvider::from_script_file(script)?)
        }
        ProviderKind::Http => Box::new(HttpProvider::new(cfg.discovery().provider)?),
    };
    let snapshot = serde_json::to_value(cfg)?;
    let run = run_discovery_with_snapshot(
        provider.as_mut(),
        &cfg.discovery(),
        cfg.out.as_deref().map(|d| (d, &snapshot)),
    )?;
    if let Some(dir) = &cfg.out {
        let mut w = BufWriter::new(File::create(dir.join("transcript.jsonl"))?);
        for m in &run.transcript {
            serde_json::to_writer(&mut w, m)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    let mut out = io::stdout().lock();
    for e in &run.archive.burn_in {
        writeln!(out, "burn-in  {:<28} {}", e.name, e.fitness)?;
    }
    for r in &run.archive.records {
        let detail = match (r.fitness, &r.error) {
            (Some(f), _) => f.to_string(),
            (None, Some(e)) => e.lines().next().unwrap_or_default().to_owned(),
            (None, None) => String::new(),
        };
        writeln!(out, "gen {:<4} {:<28} {:<16} {}", r.generation, r.name, r.status, detail)?;
    }
    if let Some(best) = run.archive.best() {
        writeln!(out, "best: {} ({})", best.name, best.fitness.unwrap_or(f64::NAN))?;
    }
    match run.stop {
        StopReason::ProviderError(e) => bail!("provider failed, archive kept: {e}"),
        stop => writeln!(out, "stopped: {}", serde_json::to_value(&stop)?.as_str().unwrap_or("?"))?,
    }
    Ok(())
}

pub fn replay(log: Option<&Path>) -> Result<()> {
    let text = match log {
        Some(p) => fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
        None => RUN_LOG.to_owned(),
    };
    let entries = parse_run_log(&text).context("transcript layout not recognized")?;
    let report = check_replay(&entries);
    let mut out = io::stdout().lock();
    for (i, name) in report.parsed_names.iter().enumerate() {
        let flag = if report.name_mismatches.contains(&i) || report.feedback_mismatches.contains(&i) {
            "MISMATCH"
        } else {
            "ok"
        };
        writeln!(out, "{:>3} {:<44} {flag}", i + 1, name)?;
    }
    writeln!(
        out,
        "{} proposals, {} fitness and {} error messages regenerated",
        report.entries, report.fitness_messages, report.error_messages
    )?;
    if !report.is_faithful() {
        bail!(
            "replay mismatch: names {:?}, feedback {:?}",
            report.name_mismatches,
            report.feedback_mismatches
        );
    }
    writeln!(out, "replay faithful")?;
    Ok(())
}
