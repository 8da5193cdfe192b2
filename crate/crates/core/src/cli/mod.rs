//! Command-line experiment runner.
//!
//! Every command reads one TOML experiment file. The output directory is
//! `--out`, else `$MITL_OUT`, else the file's `out`, else `runs`. Each run
//! directory gets a `run_manifest.json` that is written as `running` before
//! any work and finalized as `completed` or `failed`.

mod config;
mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

pub use config::{DataSource, ExperimentConfig, Preprocess, SearchConfig};
pub use report::{cmd_report, ReportRow, ReportSummary};

use crate::blob;
use crate::data::save_epochset;
use crate::hypersearch::sequential_search;
use crate::metrics::{write_history_csv, KappaMode};
use crate::model::{load_checkpoint, save_checkpoint, FreezeDepth};
use crate::strategies::{run_strategy, Strategy, TrainResult};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = "mitl", version, about = "Motor-imagery EEG training strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic epoch directories.
    Synth(CommonArgs),
    /// Train and evaluate with the configured strategy.
    Train(CommonArgs),
    /// Fine-tune a pretrained checkpoint on another experiment.
    Transfer(CommonArgs),
    /// Sequential cross-validated search over dropout, filtering and channels.
    Hypersearch(CommonArgs),
    /// Aggregate per-subject results of finished runs.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long = "freeze-depth")]
    pub freeze_depth: Option<FreezeDepth>,
    #[arg(long)]
    pub kappa: Option<KappaMode>,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Run directories written by `train` or `transfer`.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub kappa: Option<KappaMode>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: RunStatus,
    pub config: ExperimentConfig,
    pub version: String,
    pub started_unix: u64,
    #[serde(default)]
    pub finished_unix: Option<u64>,
    /// Wall-clock seconds per stage.
    #[serde(default)]
    pub timings: BTreeMap<String, f64>,
    #[serde(default)]
    pub artifacts: Vec<PathBuf>,
    #[serde(default)]
    pub error: Option<String>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Resolve the configuration of a command: file, then CLI overrides, then
/// seed derivation.
pub fn resolve_config(args: &CommonArgs) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config).context("reading configuration")?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.strategy {
        cfg.plan.strategy = s;
    }
    if let Some(d) = args.freeze_depth {
        cfg.plan.freeze_depth = d;
    }
    if let Some(k) = args.kappa {
        cfg.plan.kappa = k;
    }
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os("MITL_OUT").map(PathBuf::from))
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    cfg.out = Some(out.clone());
    cfg.resolve_seeds();
    Ok((cfg, out))
}

struct Tracker {
    path: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl Tracker {
    fn start(command: &str, cfg: &ExperimentConfig, out: &Path) -> anyhow::Result<Self> {
        blob::create_dir(out)?;
        let t = Tracker {
            path: out.join(RUN_MANIFEST),
            manifest: RunManifest {
                command: command.to_string(),
                status: RunStatus::Running,
                config: cfg.clone(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: unix_now(),
                finished_unix: None,
                timings: BTreeMap::new(),
                artifacts: Vec::new(),
                error: None,
            },
            clock: Instant::now(),
        };
        blob::write_json(&t.path, &t.manifest)?;
        Ok(t)
    }

    fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
        let t0 = Instant::now();
        let out = f().with_context(|| format!("stage `{name}` failed"));
        self.manifest.timings.insert(name.to_string(), t0.elapsed().as_secs_f64());
        out
    }

    fn finish(mut self, result: &anyhow::Result<()>) -> anyhow::Result<()> {
        self.manifest.finished_unix = Some(unix_now());
        self.manifest.timings.insert("total".into(), self.clock.elapsed().as_secs_f64());
        match result {
            Ok(()) => self.manifest.status = RunStatus::Completed,
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.error = Some(format!("{e:#}"));
            }
        }
        blob::write_json(&self.path, &self.manifest)?;
        Ok(())
    }
}

fn tracked(command: &str, cfg: &ExperimentConfig, out: &Path, body: impl FnOnce(&mut Tracker) -> anyhow::Result<()>) -> anyhow::Result<()> {
    let mut tracker = Tracker::start(command, cfg, out)?;
    let result = body(&mut tracker);
    tracker.finish(&result)?;
    result
}

/// Write one epoch directory per session under `out`.
pub fn cmd_synth(args: &CommonArgs) -> anyhow::Result<Vec<PathBuf>> {
    let (cfg, out) = resolve_config(args)?;
    if cfg.data.synth.is_none() {
        bail!("synth needs a [data.synth] section");
    }
    cfg.validate().context("validating configuration")?;
    let mut dirs = Vec::new();
    tracked("synth", &cfg, &out, |t| {
        let datasets = t.stage("generate", || Ok(cfg.load_datasets()?))?;
        t.stage("write", || {
            for (k, set) in &datasets {
                let dir = out.join(format!("s{:02}_sess{}", k.subject, k.session));
                save_epochset(set, &dir)?;
                dirs.push(dir);
            }
            Ok(())
        })?;
        t.manifest.artifacts = dirs.clone();
        Ok(())
    })?;
    Ok(dirs)
}

fn write_results(out: &Path, results: &BTreeMap<u32, TrainResult>) -> anyhow::Result<Vec<PathBuf>> {
    let mut artifacts = Vec::new();
    let shared = results
        .values()
        .next()
        .is_some_and(|r| r.strategy == Strategy::Distributed);
    if shared {
        let r = results.values().next().expect("checked non-empty");
        let dir = out.join("checkpoint");
        save_checkpoint(&r.checkpoint, &dir)?;
        let hist = out.join("history.csv");
        write_history_csv(&hist, &r.history)?;
        artifacts.extend([dir, hist]);
    }
    for (u, r) in results {
        let dir = out.join(format!("subject{u:02}"));
        artifacts.extend(r.report.write(&dir)?);
        let split = dir.join("split.json");
        blob::write_json(&split, &r.split)?;
        artifacts.push(split);
        if !shared {
            let ck = dir.join("checkpoint");
            save_checkpoint(&r.checkpoint, &ck)?;
            artifacts.push(ck);
        }
        info!(
            "subject {u}: accuracy {:.4}, kappa {:.4} on {} trials",
            r.report.accuracy, r.report.kappa, r.report.n_test
        );
    }
    Ok(artifacts)
}

fn train_like(command: &str, args: &CommonArgs) -> anyhow::Result<BTreeMap<u32, TrainResult>> {
    let (mut cfg, out) = resolve_config(args)?;
    let transfer = command == "transfer";
    if transfer != cfg.plan.strategy.is_transfer() {
        bail!(
            "`{command}` cannot run strategy {}; use {}",
            cfg.plan.strategy,
            if transfer { "transfer_standard or transfer_split" } else { "the transfer command" }
        );
    }
    cfg.validate().context("validating configuration")?;
    cfg.plan.validate().context("validating training plan")?;
    let source = match &cfg.plan.pretrained {
        Some(p) if transfer => {
            let ck = load_checkpoint(p).with_context(|| format!("loading pretrained checkpoint {}", p.display()))?;
            if cfg.preprocess.channels.is_none() && !ck.channel_names.is_empty() {
                cfg.preprocess.channels = Some(ck.channel_names.clone());
            }
            Some(ck)
        }
        _ => None,
    };
    let mut results = BTreeMap::new();
    tracked(command, &cfg, &out, |t| {
        let datasets = t.stage("load", || Ok(cfg.load_datasets()?))?;
        results = t.stage("train", || Ok(run_strategy(&datasets, &cfg.plan, cfg.subject, source.as_ref())?))?;
        let artifacts = t.stage("write", || write_results(&out, &results))?;
        t.manifest.artifacts = artifacts;
        Ok(())
    })?;
    Ok(results)
}

pub fn cmd_train(args: &CommonArgs) -> anyhow::Result<BTreeMap<u32, TrainResult>> {
    train_like("train", args)
}

pub fn cmd_transfer(args: &CommonArgs) -> anyhow::Result<BTreeMap<u32, TrainResult>> {
    train_like("transfer", args)
}

pub fn cmd_hypersearch(args: &CommonArgs) -> anyhow::Result<crate::hypersearch::SearchResult> {
    let (cfg, out) = resolve_config(args)?;
    cfg.validate().context("validating configuration")?;
    if cfg.preprocess.filter.is_some() {
        log::warn!("preprocess.filter is ignored by hypersearch; filtering is a search stage");
    }
    let mut found = None;
    tracked("hypersearch", &cfg, &out, |t| {
        let mut plain = cfg.clone();
        plain.preprocess.filter = None;
        let datasets = t.stage("load", || Ok(plain.load_datasets()?))?;
        let result = t.stage("search", || {
            Ok(sequential_search(&datasets, &cfg.search.space, cfg.search.folds, &cfg.plan)?)
        })?;
        t.manifest.artifacts = result.write(&out)?;
        info!("chosen: {}", result.chosen);
        found = Some(result);
        Ok(())
    })?;
    found.context("search produced no result")
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let dirs = cmd_synth(&a)?;
            println!("wrote {} epoch directories", dirs.len());
        }
        Command::Train(a) => print_results(&cmd_train(&a)?),
        Command::Transfer(a) => print_results(&cmd_transfer(&a)?),
        Command::Hypersearch(a) => {
            let r = cmd_hypersearch(&a)?;
            println!("{} candidates evaluated; chosen {}", r.n_evaluated(), r.chosen);
        }
        Command::Report(a) => {
            let out = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let s = cmd_report(&a.runs, &out, a.kappa)?;
            println!("{} rows in {}", s.rows.len(), out.join("summary.csv").display());
        }
    }
    Ok(())
}

fn print_results(results: &BTreeMap<u32, TrainResult>) {
    for (u, r) in results {
        println!(
            "subject {u:>3}  {:<18} accuracy {:.4}  kappa {:.4}",
            r.strategy.as_str(),
            r.report.accuracy,
            r.report.kappa
        );
    }
}

pub fn main() -> std::process::ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
