//! Sequential hyperparameter search by cross-validation on session 1.
//!
//! Three stages run in a fixed order, each keeping the earlier choices:
//! dropout rate, then high-pass filtering, then the channel set. A stage picks
//! the candidate with the best median of per-subject cross-validated
//! accuracies. Ties go to the smaller dropout, to no filtering and to the
//! larger channel set.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blob;
use crate::data::{highpass_filter, is_eog, subjects, ChannelStats, Datasets, EpochSet, FilterSpec, SessionKey, FIVE_CHANNELS};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, argmax_rows};
use crate::model::build_model;
use crate::rng::derive_rng;
use crate::strategies::{train_loop, LoopConfig, TrainData, TrainingPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelSet {
    /// Every recorded channel.
    All,
    /// Every channel except EOG.
    NoEog,
    /// Fz, C3, Cz, C4, Pz.
    Five,
}

impl ChannelSet {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelSet::All => "all",
            ChannelSet::NoEog => "no_eog",
            ChannelSet::Five => "five",
        }
    }

    pub fn names(self, available: &[String]) -> Vec<String> {
        match self {
            ChannelSet::All => available.to_vec(),
            ChannelSet::NoEog => available.iter().filter(|n| !is_eog(n)).cloned().collect(),
            ChannelSet::Five => FIVE_CHANNELS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn select(self, set: &EpochSet) -> Result<EpochSet> {
        match self {
            ChannelSet::All => Ok(set.clone()),
            other => set.select_channels(&other.names(set.channel_names())),
        }
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub dropout_grid: Vec<f64>,
    pub filter_options: Vec<bool>,
    pub channel_sets: Vec<ChannelSet>,
    pub filter: FilterSpec,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            dropout_grid: (0..10).map(|i| i as f64 / 10.0).collect(),
            filter_options: vec![false, true],
            channel_sets: vec![ChannelSet::All, ChannelSet::NoEog, ChannelSet::Five],
            filter: FilterSpec::default(),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dropout_grid.is_empty() || self.filter_options.is_empty() || self.channel_sets.is_empty() {
            return Err(Error::Config("every search grid needs at least one value".into()));
        }
        if let Some(d) = self.dropout_grid.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(Error::Config(format!("dropout {d} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub dropout: f64,
    pub filter: bool,
    pub channels: ChannelSet,
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "dropout={} filter={} channels={}",
            self.dropout,
            if self.filter { "on" } else { "off" },
            self.channels
        )
    }
}

/// Cross-validation result of one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub per_subject: BTreeMap<u32, f64>,
    /// Sessions read while evaluating.
    pub touched: BTreeSet<SessionKey>,
}

/// Middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Fold of each trial: every class is dealt round-robin over the folds.
pub fn stratified_folds(labels: &[usize], folds: usize) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid("folds", format!("need at least 2, got {folds}")));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    let mut out = Vec::with_capacity(labels.len());
    for &l in labels {
        out.push(counts[l] % folds);
        counts[l] += 1;
    }
    if let Some((class, &c)) = counts.iter().enumerate().find(|(_, &c)| c > 0 && c < folds) {
        return Err(Error::invalid(
            "folds",
            format!("class {class} has {c} trials, fewer than {folds} folds"),
        ));
    }
    Ok(out)
}

fn prepare(set: &EpochSet, candidate: &Candidate, filter: &FilterSpec) -> Result<EpochSet> {
    let set = candidate.channels.select(set)?;
    if candidate.filter {
        highpass_filter(&set, filter)
    } else {
        Ok(set)
    }
}

fn fold_accuracy(set: &EpochSet, fold_of: &[usize], fold: usize, candidate: &Candidate, plan: &TrainingPlan, tag: &str) -> Result<f64> {
    let train_idx: Vec<usize> = (0..set.n_trials()).filter(|&i| fold_of[i] != fold).collect();
    let test_idx: Vec<usize> = (0..set.n_trials()).filter(|&i| fold_of[i] == fold).collect();
    let train = set.subset(&train_idx)?;
    let stats = ChannelStats::fit(&[&train])?;
    let train = stats.apply(&train)?;
    let test = stats.apply(&set.subset(&test_idx)?)?;

    let mut spec = plan
        .architecture
        .resolve(set.n_channels(), set.n_samples(), set.n_classes(), set.sample_rate_hz);
    spec.dropout_rate = candidate.dropout;
    let (mut params, model) = build_model(&spec, &mut derive_rng(plan.seed, &format!("{tag}/init")))?;
    let origins = vec![set.key(); train.n_trials()];
    let (fit, val) = TrainData::new(train, origins)?.split_validation(plan.val_fraction)?;
    let cfg = LoopConfig {
        phase: "cv".into(),
        epochs: plan.epochs,
        batch_size: plan.batch_size,
        lr: plan.lr,
        patience: plan.patience,
    };
    train_loop(&model, &mut params, &fit, val.as_ref(), &cfg, &mut derive_rng(plan.seed, &format!("{tag}/train")))?;
    let all: Vec<usize> = (0..test.n_trials()).collect();
    let probs = model.predict_proba(&params, &test.to_input(&all)?, 64)?;
    accuracy(&argmax_rows(&probs)?, test.labels())
}

/// Stratified k-fold accuracy of a freshly trained model on each subject's
/// session 1. Session 2 is never read.
pub fn cv_evaluate(
    datasets: &Datasets,
    candidate: &Candidate,
    folds: usize,
    plan: &TrainingPlan,
    filter: &FilterSpec,
) -> Result<CvOutcome> {
    plan.check_hyperparameters()?;
    let subs = subjects(datasets);
    let prepared: Vec<(u32, EpochSet, Vec<usize>)> = subs
        .iter()
        .map(|&u| {
            let key = SessionKey::new(u, 1);
            let set = datasets.get(&key).ok_or_else(|| Error::Missing(format!("session {key}")))?;
            let set = prepare(set, candidate, filter)?;
            let fold_of = stratified_folds(set.labels(), folds)?;
            Ok((u, set, fold_of))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..prepared.len()).flat_map(|s| (0..folds).map(move |f| (s, f))).collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(s, f)| {
            let (u, set, fold_of) = &prepared[s];
            fold_accuracy(set, fold_of, f, candidate, plan, &format!("cv/subject{u}/fold{f}"))
        })
        .collect::<Result<_>>()?;
    let per_subject = prepared
        .iter()
        .enumerate()
        .map(|(s, (u, _, _))| (*u, accs[s * folds..(s + 1) * folds].iter().sum::<f64>() / folds as f64))
        .collect();
    Ok(CvOutcome {
        per_subject,
        touched: subs.iter().map(|&u| SessionKey::new(u, 1)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: Candidate,
    pub per_subject: BTreeMap<u32, f64>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage: String,
    pub candidates: Vec<ScoredCandidate>,
    pub chosen: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub chosen: Candidate,
    pub criterion: String,
    pub folds: usize,
    pub stages: Vec<StageResult>,
    pub touched_sessions: BTreeSet<SessionKey>,
}

impl SearchResult {
    pub fn n_evaluated(&self) -> usize {
        self.stages.iter().map(|s| s.candidates.len()).sum()
    }

    /// Write `search_table.csv` and `search_result.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        blob::create_dir(dir)?;
        let subs: BTreeSet<u32> = self
            .stages
            .iter()
            .flat_map(|s| s.candidates.iter().flat_map(|c| c.per_subject.keys().copied()))
            .collect();
        let mut csv = String::from("stage,dropout,filter,channels,median,chosen");
        for u in &subs {
            let _ = write!(csv, ",subject{u}");
        }
        csv.push('\n');
        for stage in &self.stages {
            for (i, c) in stage.candidates.iter().enumerate() {
                let _ = write!(
                    csv,
                    "{},{},{},{},{},{}",
                    stage.stage,
                    c.candidate.dropout,
                    if c.candidate.filter { "on" } else { "off" },
                    c.candidate.channels,
                    c.median,
                    i == stage.chosen
                );
                for u in &subs {
                    let _ = write!(csv, ",{}", c.per_subject.get(u).map(|a| a.to_string()).unwrap_or_default());
                }
                csv.push('\n');
            }
        }
        let table = dir.join("search_table.csv");
        blob::write_bytes(&table, csv.as_bytes())?;
        let json = dir.join("search_result.json");
        blob::write_json(&json, self)?;
        Ok(vec![table, json])
    }
}

fn run_stage(
    name: &str,
    candidates: Vec<Candidate>,
    datasets: &Datasets,
    folds: usize,
    plan: &TrainingPlan,
    filter: &FilterSpec,
    touched: &mut BTreeSet<SessionKey>,
) -> Result<StageResult> {
    let mut scored = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let out = cv_evaluate(datasets, &candidate, folds, plan, filter)?;
        touched.extend(out.touched);
        let values: Vec<f64> = out.per_subject.values().copied().collect();
        let median = median(&values).ok_or_else(|| Error::Missing("subjects to evaluate".into()))?;
        log::info!("{name}: {candidate} -> median {median:.4}");
        scored.push(ScoredCandidate {
            candidate,
            per_subject: out.per_subject,
            median,
        });
    }
    // candidates arrive in tie-break preference order, so the first maximum wins
    let mut chosen = 0;
    for (i, c) in scored.iter().enumerate() {
        if c.median > scored[chosen].median {
            chosen = i;
        }
    }
    Ok(StageResult {
        stage: name.to_string(),
        candidates: scored,
        chosen,
    })
}

/// Dropout, then filtering, then channels.
pub fn sequential_search(datasets: &Datasets, space: &SearchSpace, folds: usize, plan: &TrainingPlan) -> Result<SearchResult> {
    space.validate()?;
    let mut touched = BTreeSet::new();

    let mut dropouts = space.dropout_grid.clone();
    dropouts.sort_by(f64::total_cmp);
    let base_channels = if space.channel_sets.contains(&ChannelSet::All) {
        ChannelSet::All
    } else {
        space.channel_sets[0]
    };
    let stage1: Vec<Candidate> = dropouts
        .iter()
        .map(|&dropout| Candidate {
            dropout,
            filter: false,
            channels: base_channels,
        })
        .collect();
    let s1 = run_stage("dropout", stage1, datasets, folds, plan, &space.filter, &mut touched)?;
    let mut best = s1.candidates[s1.chosen].candidate;

    let mut filters = space.filter_options.clone();
    filters.sort();
    filters.dedup();
    let stage2 = filters.iter().map(|&filter| Candidate { filter, ..best }).collect();
    let s2 = run_stage("filter", stage2, datasets, folds, plan, &space.filter, &mut touched)?;
    best = s2.candidates[s2.chosen].candidate;

    let available = datasets
        .values()
        .next()
        .map(|s| s.channel_names().to_vec())
        .unwrap_or_default();
    let mut sets = space.channel_sets.clone();
    sets.sort_by_key(|c| (std::cmp::Reverse(c.names(&available).len()), *c));
    sets.dedup();
    let stage3 = sets.iter().map(|&channels| Candidate { channels, ..best }).collect();
    let s3 = run_stage("channels", stage3, datasets, folds, plan, &space.filter, &mut touched)?;
    best = s3.candidates[s3.chosen].candidate;

    Ok(SearchResult {
        chosen: best,
        criterion: "median of per-subject cross-validated accuracy".into(),
        folds,
        stages: vec![s1, s2, s3],
        touched_sessions: touched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn folds_are_stratified() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1];
        let f = stratified_folds(&labels, 2).unwrap();
        for fold in 0..2 {
            let in_fold: Vec<usize> = (0..8).filter(|&i| f[i] == fold).map(|i| labels[i]).collect();
            assert_eq!(in_fold.iter().filter(|&&l| l == 0).count(), 2);
            assert_eq!(in_fold.len(), 4);
        }
        assert!(stratified_folds(&[0, 0, 1], 2).is_err());
        assert!(stratified_folds(&labels, 1).is_err());
    }

    #[test]
    fn default_grid_sizes() {
        let s = SearchSpace::default();
        assert_eq!(s.dropout_grid.len() + s.filter_options.len() + s.channel_sets.len(), 15);
        assert!((s.dropout_grid[9] - 0.9).abs() < 1e-12);
    }
}
