//! Training strategies.
//!
//! * standard: one subject, session 1 trains, session 2 tests
//! * distributed: session 1 of every subject trains one model, each subject's
//!   session 2 tests it
//! * split: every session of all other subjects pretrains, the holdout's
//!   session 1 retrains, its session 2 tests
//! * frozen: split with the lower blocks frozen while retraining
//! * transfer variants: standard or split starting from a checkpoint trained
//!   on another experiment, after swapping its classification head
//!
//! Each phase refits channel standardization on its own training sessions
//! and starts from a fresh optimizer state.

mod train_loop;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use train_loop::{eval_loss, train_loop, BatchAudit, LoopConfig, LoopOutcome, TrainData};

use crate::blob;
use crate::data::{concat, make_split, subjects, ChannelStats, Datasets, EpochSet, SessionKey, SplitAssignment};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EpochRecord, EvaluationReport, KappaMode};
use crate::model::{apply_freeze, build_model, ArchitectureSpec, FreezeDepth, ModelCheckpoint, Provenance};
use crate::rng::derive_rng;
use crate::tensor::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Standard,
    Distributed,
    Split,
    Frozen,
    TransferStandard,
    TransferSplit,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Standard,
        Strategy::Distributed,
        Strategy::Split,
        Strategy::Frozen,
        Strategy::TransferStandard,
        Strategy::TransferSplit,
    ];

    pub fn is_transfer(self) -> bool {
        matches!(self, Strategy::TransferStandard | Strategy::TransferSplit)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Distributed => "distributed",
            Strategy::Split => "split",
            Strategy::Frozen => "frozen",
            Strategy::TransferStandard => "transfer_standard",
            Strategy::TransferSplit => "transfer_split",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Strategy::ALL.into_iter().find(|k| k.as_str() == norm).ok_or_else(|| {
            Error::invalid(
                "strategy",
                format!("`{s}` is not one of standard, distributed, split, frozen, transfer_standard, transfer_split"),
            )
        })
    }
}

/// Architecture fields that override the defaults derived from the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchOverrides {
    pub f1: Option<usize>,
    pub depth_multiplier: Option<usize>,
    pub f2: Option<usize>,
    pub temporal_kernel_len: Option<usize>,
    pub separable_kernel_len: Option<usize>,
    pub pool1: Option<usize>,
    pub pool2: Option<usize>,
    pub dropout_rate: Option<f64>,
}

impl ArchOverrides {
    pub fn resolve(&self, n_channels: usize, n_samples: usize, n_classes: usize, sample_rate_hz: f64) -> ArchitectureSpec {
        let mut s = ArchitectureSpec::eegnet(n_channels, n_samples, n_classes, sample_rate_hz);
        s.f1 = self.f1.unwrap_or(s.f1);
        s.depth_multiplier = self.depth_multiplier.unwrap_or(s.depth_multiplier);
        s.f2 = self.f2.unwrap_or(s.f1 * s.depth_multiplier);
        s.temporal_kernel_len = self.temporal_kernel_len.unwrap_or(s.temporal_kernel_len);
        s.separable_kernel_len = self.separable_kernel_len.unwrap_or(s.separable_kernel_len);
        s.pool1 = self.pool1.unwrap_or(s.pool1);
        s.pool2 = self.pool2.unwrap_or(s.pool2);
        s.dropout_rate = self.dropout_rate.unwrap_or(s.dropout_rate);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingPlan {
    pub strategy: Strategy,
    #[serde(default)]
    pub freeze_depth: FreezeDepth,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    /// Epochs of the retraining phase; defaults to `epochs`.
    #[serde(default)]
    pub retrain_epochs: Option<usize>,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    /// Learning rate of the retraining phase; defaults to `lr`.
    #[serde(default)]
    pub retrain_lr: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    /// Share of each class's training trials held out for early stopping.
    #[serde(default = "defaults::val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub kappa: KappaMode,
    #[serde(default)]
    pub architecture: ArchOverrides,
    #[serde(default = "defaults::dataset_id")]
    pub dataset_id: String,
}

mod defaults {
    pub fn epochs() -> usize {
        200
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn patience() -> usize {
        20
    }
    pub fn val_fraction() -> f64 {
        0.2
    }
    pub fn dataset_id() -> String {
        "unnamed".into()
    }
}

impl TrainingPlan {
    pub fn new(strategy: Strategy) -> Self {
        TrainingPlan {
            strategy,
            freeze_depth: FreezeDepth::None,
            epochs: defaults::epochs(),
            retrain_epochs: None,
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            retrain_lr: None,
            seed: 0,
            pretrained: None,
            patience: defaults::patience(),
            val_fraction: defaults::val_fraction(),
            kappa: KappaMode::Majority,
            architecture: ArchOverrides::default(),
            dataset_id: defaults::dataset_id(),
        }
    }

    /// Checks that do not depend on the data source.
    pub fn check_hyperparameters(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, lr) in [("lr", Some(self.lr)), ("retrain_lr", self.retrain_lr)] {
            if let Some(lr) = lr {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {lr}")));
                }
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        if self.strategy == Strategy::Frozen && self.freeze_depth == FreezeDepth::None {
            return Err(Error::Config("strategy frozen needs freeze_depth block1 or block1+2".into()));
        }
        Ok(())
    }

    /// Every plan invariant, including the pretrained checkpoint of transfer
    /// strategies.
    pub fn validate(&self) -> Result<()> {
        self.check_hyperparameters()?;
        if self.strategy.is_transfer() && self.pretrained.is_none() {
            return Err(Error::Config(format!("strategy {} needs a pretrained checkpoint", self.strategy)));
        }
        Ok(())
    }

    fn retrain_epochs(&self) -> usize {
        self.retrain_epochs.unwrap_or(self.epochs)
    }

    fn retrain_lr(&self) -> f64 {
        self.retrain_lr.unwrap_or(self.lr)
    }
}

/// Parameters at the start and end of one training phase.
#[derive(Clone, Debug)]
pub struct PhaseRecord {
    pub name: String,
    pub keys: Vec<SessionKey>,
    pub n_train: usize,
    pub n_val: usize,
    pub freeze_depth: FreezeDepth,
    pub initial: ParamStore,
    pub final_params: ParamStore,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl PhaseRecord {
    /// Names of frozen tensors whose bits changed during the phase.
    pub fn freeze_violations(&self) -> Vec<String> {
        self.initial
            .frozen()
            .iter()
            .filter(|n| {
                let a = self.initial.get(n).map(|t| t.data());
                let b = self.final_params.get(n).map(|t| t.data());
                match (a, b) {
                    (Some(a), Some(b)) => a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()),
                    _ => true,
                }
            })
            .cloned()
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub strategy: Strategy,
    pub subject: Option<u32>,
    pub checkpoint: ModelCheckpoint,
    pub history: Vec<EpochRecord>,
    pub report: EvaluationReport,
    pub split: SplitAssignment,
    pub audit: BatchAudit,
    pub phases: Vec<PhaseRecord>,
}

impl TrainResult {
    /// Test sessions must be absent from the split's fitting keys and from
    /// every gradient step.
    pub fn check_leakage(&self) -> Result<()> {
        self.split.check_leakage()?;
        if let Some(k) = self.split.test.iter().find(|k| self.audit.sessions.contains(k)) {
            return Err(Error::invalid("leakage", format!("test session {k} entered a training batch")));
        }
        Ok(())
    }
}

fn gather(datasets: &Datasets, keys: &[SessionKey]) -> Result<TrainData> {
    let sets: Vec<&EpochSet> = keys
        .iter()
        .map(|k| datasets.get(k).ok_or_else(|| Error::Missing(format!("session {k}"))))
        .collect::<Result<_>>()?;
    let origins = sets.iter().flat_map(|s| std::iter::repeat_n(s.key(), s.n_trials())).collect();
    TrainData::new(concat(&sets)?, origins)
}

struct Phase<'a> {
    name: &'a str,
    keys: &'a [SessionKey],
    epochs: usize,
    lr: f64,
    freeze: FreezeDepth,
}

struct Run<'a> {
    plan: &'a TrainingPlan,
    strategy: Strategy,
    tag: String,
    history: Vec<EpochRecord>,
    audit: BatchAudit,
    phases: Vec<PhaseRecord>,
}

impl<'a> Run<'a> {
    fn new(plan: &'a TrainingPlan, strategy: Strategy, subject: Option<u32>) -> Result<Self> {
        plan.check_hyperparameters()?;
        let tag = match subject {
            Some(u) => format!("{strategy}/subject{u}"),
            None => strategy.to_string(),
        };
        Ok(Run {
            plan,
            strategy,
            tag,
            history: Vec::new(),
            audit: BatchAudit::default(),
            phases: Vec::new(),
        })
    }

    fn fresh(&self, datasets: &Datasets, keys: &[SessionKey]) -> Result<ModelCheckpoint> {
        let first = datasets
            .get(&keys[0])
            .ok_or_else(|| Error::Missing(format!("session {}", keys[0])))?;
        let spec = self.plan.architecture.resolve(
            first.n_channels(),
            first.n_samples(),
            first.n_classes(),
            first.sample_rate_hz,
        );
        let (params, _) = build_model(&spec, &mut derive_rng(self.plan.seed, &format!("{}/init", self.tag)))?;
        let mut ckpt = ModelCheckpoint::new(spec, params, self.provenance())?;
        ckpt.channel_names = first.channel_names().to_vec();
        Ok(ckpt)
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            dataset_id: self.plan.dataset_id.clone(),
            strategy: self.strategy.to_string(),
            seed: self.plan.seed,
            epochs: 0,
            surgeries: Vec::new(),
            source: None,
        }
    }

    fn phase(&mut self, ckpt: &mut ModelCheckpoint, datasets: &Datasets, phase: Phase<'_>) -> Result<()> {
        let mut data = gather(datasets, phase.keys)?;
        check_channels(ckpt, &data.set)?;
        let stats = ChannelStats::fit(&[&data.set])?;
        data.set = stats.apply(&data.set)?;
        let (train, val) = data.split_validation(self.plan.val_fraction)?;

        ckpt.params.reset_optimizer();
        apply_freeze(&mut ckpt.params, phase.freeze, &ckpt.block_index)?;
        let initial = ckpt.params.clone();
        let model = ckpt.model()?;
        let cfg = LoopConfig {
            phase: phase.name.to_string(),
            epochs: phase.epochs,
            batch_size: self.plan.batch_size,
            lr: phase.lr,
            patience: self.plan.patience,
        };
        let mut rng = derive_rng(self.plan.seed, &format!("{}/{}", self.tag, phase.name));
        let out = train_loop(&model, &mut ckpt.params, &train, val.as_ref(), &cfg, &mut rng)?;
        info!(
            "{} {}: {} epochs, best {}, {} train / {} val trials",
            self.tag,
            phase.name,
            out.history.len(),
            out.best_epoch,
            train.set.n_trials(),
            val.as_ref().map_or(0, |v| v.set.n_trials())
        );

        ckpt.normalization = Some(stats);
        ckpt.provenance.epochs += out.history.len();
        self.history.extend(out.history);
        self.audit.merge(&out.audit);
        self.phases.push(PhaseRecord {
            name: phase.name.to_string(),
            keys: phase.keys.to_vec(),
            n_train: train.set.n_trials(),
            n_val: val.map_or(0, |v| v.set.n_trials()),
            freeze_depth: phase.freeze,
            initial,
            final_params: ckpt.params.clone(),
            best_epoch: out.best_epoch,
            stopped_early: out.stopped_early,
        });
        Ok(())
    }

    fn finish(self, ckpt: ModelCheckpoint, datasets: &Datasets, split: SplitAssignment, subject: Option<u32>) -> Result<TrainResult> {
        let mut report = evaluate_checkpoint(&ckpt, datasets, &split.test, self.plan.kappa)?;
        report.history = self.history.clone();
        let result = TrainResult {
            strategy: self.strategy,
            subject,
            checkpoint: ckpt,
            history: self.history,
            report,
            split,
            audit: self.audit,
            phases: self.phases,
        };
        result.check_leakage()?;
        Ok(result)
    }
}

fn check_channels(ckpt: &ModelCheckpoint, set: &EpochSet) -> Result<()> {
    if set.n_channels() != ckpt.spec.n_channels || set.n_samples() != ckpt.spec.n_samples {
        return Err(Error::shape(
            "channels",
            format!(
                "model expects {} channels x {} samples [{}], data has {} x {} [{}]",
                ckpt.spec.n_channels,
                ckpt.spec.n_samples,
                ckpt.channel_names.join(", "),
                set.n_channels(),
                set.n_samples(),
                set.channel_names().join(", ")
            ),
        ));
    }
    if set.n_classes() != ckpt.spec.n_classes {
        return Err(Error::invalid(
            "classes",
            format!("model has {} classes, data has {}", ckpt.spec.n_classes, set.n_classes()),
        ));
    }
    Ok(())
}

/// Evaluate `ckpt` on the concatenation of `keys`, standardized with the
/// checkpoint's stored statistics.
pub fn evaluate_checkpoint(ckpt: &ModelCheckpoint, datasets: &Datasets, keys: &[SessionKey], mode: KappaMode) -> Result<EvaluationReport> {
    let data = gather(datasets, keys)?;
    check_channels(ckpt, &data.set)?;
    let set = match &ckpt.normalization {
        Some(stats) => stats.apply(&data.set)?,
        None => data.set,
    };
    let all: Vec<usize> = (0..set.n_trials()).collect();
    let probs = ckpt.model()?.predict_proba(&ckpt.params, &set.to_input(&all)?, 64)?;
    evaluate(&probs, set.labels(), set.class_names(), mode)
}

/// Fresh model trained on `(subject, 1)`, tested on `(subject, 2)`.
pub fn run_standard(datasets: &Datasets, subject: u32, plan: &TrainingPlan) -> Result<TrainResult> {
    let split = make_split(datasets, Strategy::Standard, Some(subject))?;
    let mut run = Run::new(plan, Strategy::Standard, Some(subject))?;
    let mut ckpt = run.fresh(datasets, &split.train)?;
    run.phase(
        &mut ckpt,
        datasets,
        Phase {
            name: "train",
            keys: &split.train,
            epochs: plan.epochs,
            lr: plan.lr,
            freeze: FreezeDepth::None,
        },
    )?;
    run.finish(ckpt, datasets, split, Some(subject))
}

/// One model on every subject's session 1, scored per subject on session 2.
/// All results share the same checkpoint.
pub fn run_distributed(datasets: &Datasets, plan: &TrainingPlan) -> Result<BTreeMap<u32, TrainResult>> {
    let subs = subjects(datasets);
    if subs.len() < 2 {
        return Err(Error::invalid("subjects", format!("distributed needs at least 2, got {}", subs.len())));
    }
    let split = make_split(datasets, Strategy::Distributed, None)?;
    let mut run = Run::new(plan, Strategy::Distributed, None)?;
    let mut ckpt = run.fresh(datasets, &split.train)?;
    run.phase(
        &mut ckpt,
        datasets,
        Phase {
            name: "train",
            keys: &split.train,
            epochs: plan.epochs,
            lr: plan.lr,
            freeze: FreezeDepth::None,
        },
    )?;
    let mut out = BTreeMap::new();
    for u in subs {
        let test = vec![SessionKey::new(u, 2)];
        let mut report = evaluate_checkpoint(&ckpt, datasets, &test, plan.kappa)?;
        report.history = run.history.clone();
        let result = TrainResult {
            strategy: Strategy::Distributed,
            subject: Some(u),
            checkpoint: ckpt.clone(),
            history: run.history.clone(),
            report,
            split: SplitAssignment {
                train: split.train.clone(),
                retrain: None,
                test,
            },
            audit: run.audit.clone(),
            phases: run.phases.clone(),
        };
        result.check_leakage()?;
        out.insert(u, result);
    }
    Ok(out)
}

fn split_phases(
    mut run: Run<'_>,
    mut ckpt: ModelCheckpoint,
    datasets: &Datasets,
    split: SplitAssignment,
    holdout: u32,
    freeze: FreezeDepth,
) -> Result<TrainResult> {
    let plan = run.plan;
    run.phase(
        &mut ckpt,
        datasets,
        Phase {
            name: "pretrain",
            keys: &split.train,
            epochs: plan.epochs,
            lr: plan.lr,
            freeze: FreezeDepth::None,
        },
    )?;
    let retrain = split.retrain.clone().unwrap_or_default();
    run.phase(
        &mut ckpt,
        datasets,
        Phase {
            name: "retrain",
            keys: &retrain,
            epochs: plan.retrain_epochs(),
            lr: plan.retrain_lr(),
            freeze,
        },
    )?;
    run.finish(ckpt, datasets, split, Some(holdout))
}

/// Pretrain on all sessions of the other subjects, continue on the holdout's
/// session 1 with nothing frozen, test on its session 2.
pub fn run_split(datasets: &Datasets, holdout: u32, plan: &TrainingPlan) -> Result<TrainResult> {
    let split = make_split(datasets, Strategy::Split, Some(holdout))?;
    let run = Run::new(plan, Strategy::Split, Some(holdout))?;
    let ckpt = run.fresh(datasets, &split.train)?;
    split_phases(run, ckpt, datasets, split, holdout, FreezeDepth::None)
}

/// As [`run_split`] with `plan.freeze_depth` frozen during retraining.
pub fn run_frozen(datasets: &Datasets, holdout: u32, plan: &TrainingPlan) -> Result<TrainResult> {
    if plan.freeze_depth == FreezeDepth::None {
        return Err(Error::Config("frozen learning needs freeze_depth block1 or block1+2".into()));
    }
    let split = make_split(datasets, Strategy::Frozen, Some(holdout))?;
    let run = Run::new(plan, Strategy::Frozen, Some(holdout))?;
    let ckpt = run.fresh(datasets, &split.train)?;
    split_phases(run, ckpt, datasets, split, holdout, plan.freeze_depth)
}

/// Short identity of a checkpoint: its origin and a checksum of its values.
pub fn checkpoint_identity(ckpt: &ModelCheckpoint, location: Option<&str>) -> String {
    let mut bytes = Vec::new();
    for (_, t) in ckpt.params.iter() {
        bytes.extend(blob::encode_f32(t.data()));
    }
    format!(
        "{}dataset={} strategy={} seed={} crc32={:08x}",
        location.map(|l| format!("{l} ")).unwrap_or_default(),
        ckpt.provenance.dataset_id,
        ckpt.provenance.strategy,
        ckpt.provenance.seed,
        blob::crc32(&bytes)
    )
}

fn transfer_source(source: &ModelCheckpoint, target: &Datasets, run: &Run<'_>) -> Result<ModelCheckpoint> {
    let first = target.values().next().ok_or_else(|| Error::Missing("target sessions".into()))?;
    for set in target.values() {
        if set.n_channels() != source.spec.n_channels {
            return Err(Error::shape(
                "channels",
                format!(
                    "source model has {} channels [{}], target {} has {} [{}]",
                    source.spec.n_channels,
                    source.channel_names.join(", "),
                    set.key(),
                    set.n_channels(),
                    set.channel_names().join(", ")
                ),
            ));
        }
        if set.n_samples() != source.spec.n_samples {
            return Err(Error::shape(
                "samples",
                format!(
                    "source model expects {} samples per trial, target {} has {}",
                    source.spec.n_samples,
                    set.key(),
                    set.n_samples()
                ),
            ));
        }
    }
    if first.channel_names() != source.channel_names.as_slice() && !source.channel_names.is_empty() {
        warn!(
            "channel names differ: source [{}], target [{}]",
            source.channel_names.join(", "),
            first.channel_names().join(", ")
        );
    }
    let mut rng = derive_rng(run.plan.seed, &format!("{}/head", run.tag));
    let mut ckpt = source.replace_head(first.n_classes(), &mut rng)?;
    let location = run.plan.pretrained.as_ref().map(|p| p.display().to_string());
    ckpt.provenance = Provenance {
        surgeries: ckpt.provenance.surgeries.clone(),
        source: Some(checkpoint_identity(source, location.as_deref())),
        ..run.provenance()
    };
    ckpt.channel_names = first.channel_names().to_vec();
    Ok(ckpt)
}

/// Replace the head of `source` for the target classes, then fine-tune on
/// `(subject, 1)` with `plan.freeze_depth` frozen and test on `(subject, 2)`.
pub fn run_transfer_standard(source: &ModelCheckpoint, target: &Datasets, subject: u32, plan: &TrainingPlan) -> Result<TrainResult> {
    let split = make_split(target, Strategy::TransferStandard, Some(subject))?;
    let mut run = Run::new(plan, Strategy::TransferStandard, Some(subject))?;
    let mut ckpt = transfer_source(source, target, &run)?;
    run.phase(
        &mut ckpt,
        target,
        Phase {
            name: "finetune",
            keys: &split.train,
            epochs: plan.epochs,
            lr: plan.lr,
            freeze: plan.freeze_depth,
        },
    )?;
    run.finish(ckpt, target, split, Some(subject))
}

/// Replace the head of `source`, then run both split phases on the target
/// data; `plan.freeze_depth` applies to the retraining phase.
pub fn run_transfer_split(source: &ModelCheckpoint, target: &Datasets, holdout: u32, plan: &TrainingPlan) -> Result<TrainResult> {
    let split = make_split(target, Strategy::TransferSplit, Some(holdout))?;
    let run = Run::new(plan, Strategy::TransferSplit, Some(holdout))?;
    let ckpt = transfer_source(source, target, &run)?;
    split_phases(run, ckpt, target, split, holdout, plan.freeze_depth)
}

/// Run `plan.strategy` for one subject, or for every subject when `subject`
/// is `None`. Per-subject runs execute in parallel.
pub fn run_strategy(
    datasets: &Datasets,
    plan: &TrainingPlan,
    subject: Option<u32>,
    source: Option<&ModelCheckpoint>,
) -> Result<BTreeMap<u32, TrainResult>> {
    if plan.strategy == Strategy::Distributed {
        let mut all = run_distributed(datasets, plan)?;
        if let Some(u) = subject {
            all.retain(|k, _| *k == u);
        }
        return Ok(all);
    }
    if plan.strategy.is_transfer() && source.is_none() {
        return Err(Error::Config(format!("strategy {} needs a pretrained checkpoint", plan.strategy)));
    }
    let targets = match subject {
        Some(u) => vec![u],
        None => subjects(datasets),
    };
    let one = |u: u32| -> Result<(u32, TrainResult)> {
        let r = match plan.strategy {
            Strategy::Standard => run_standard(datasets, u, plan),
            Strategy::Split => run_split(datasets, u, plan),
            Strategy::Frozen => run_frozen(datasets, u, plan),
            Strategy::TransferStandard => run_transfer_standard(source.expect("checked above"), datasets, u, plan),
            Strategy::TransferSplit => run_transfer_split(source.expect("checked above"), datasets, u, plan),
            Strategy::Distributed => unreachable!("handled above"),
        }?;
        Ok((u, r))
    };
    targets.into_par_iter().map(one).collect()
}
