use std::collections::{BTreeMap, BTreeSet};

use log::debug;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EpochSet, SessionKey};
use crate::error::{Error, Result};
use crate::metrics::EpochRecord;
use crate::model::{update_running_stats, Eegnet};
use crate::rng::SeededRng;
use crate::tensor::{AdamConfig, Graph, ParamStore};

/// Trials of one training phase, each tagged with the session it came from.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub set: EpochSet,
    pub origins: Vec<SessionKey>,
}

impl TrainData {
    pub fn new(set: EpochSet, origins: Vec<SessionKey>) -> Result<Self> {
        if origins.len() != set.n_trials() {
            return Err(Error::shape(
                "origins",
                format!("{} origins for {} trials", origins.len(), set.n_trials()),
            ));
        }
        Ok(TrainData { set, origins })
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(TrainData {
            set: self.set.subset(idx)?,
            origins: idx.iter().map(|&i| self.origins[i]).collect(),
        })
    }

    /// Hold out the last `fraction` of each class's trials for validation.
    /// Classes too small to spare a trial contribute none.
    pub fn split_validation(&self, fraction: f64) -> Result<(TrainData, Option<TrainData>)> {
        let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.set.labels().iter().enumerate() {
            per_class.entry(l).or_default().push(i);
        }
        let mut val = BTreeSet::new();
        for idx in per_class.values() {
            let n_val = (idx.len() as f64 * fraction).floor() as usize;
            val.extend(&idx[idx.len() - n_val..]);
        }
        if val.is_empty() || val.len() == self.set.n_trials() {
            return Ok((self.clone(), None));
        }
        let train: Vec<usize> = (0..self.set.n_trials()).filter(|i| !val.contains(i)).collect();
        let val: Vec<usize> = val.into_iter().collect();
        Ok((self.subset(&train)?, Some(self.subset(&val)?)))
    }
}

/// Which sessions contributed trials to gradient steps.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchAudit {
    pub sessions: BTreeSet<SessionKey>,
    pub trial_steps: usize,
}

impl BatchAudit {
    pub fn merge(&mut self, other: &BatchAudit) {
        self.sessions.extend(other.sessions.iter().copied());
        self.trial_steps += other.trial_steps;
    }
}

#[derive(Clone, Debug)]
pub struct LoopConfig {
    pub phase: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
}

#[derive(Clone, Debug, Default)]
pub struct LoopOutcome {
    pub history: Vec<EpochRecord>,
    pub audit: BatchAudit,
    /// Epoch whose parameters were kept, counting from 1; 0 if none ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn batch_loss(model: &Eegnet, params: &ParamStore, data: &TrainData, idx: &[usize], rng: &mut SeededRng) -> Result<f64> {
    let mut g = Graph::new();
    let fw = model.forward(&mut g, params, data.set.to_input(idx)?, false, rng)?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.set.labels()[i]).collect();
    let loss = g.softmax_cross_entropy(fw.logits, &labels)?;
    Ok(f64::from(g.value(loss).data()[0]))
}

/// Mean cross-entropy in eval mode.
pub fn eval_loss(model: &Eegnet, params: &ParamStore, data: &TrainData, batch: usize) -> Result<f64> {
    let n = data.set.n_trials();
    let mut unused = crate::rng::seeded(0);
    let mut total = 0.0;
    for start in (0..n).step_by(batch.max(1)) {
        let idx: Vec<usize> = (start..(start + batch.max(1)).min(n)).collect();
        total += batch_loss(model, params, data, &idx, &mut unused)? * idx.len() as f64;
    }
    Ok(total / n as f64)
}

/// Seeded mini-batch Adam with per-batch running-statistic updates. With a
/// validation set, training stops after `patience` epochs without a new best
/// validation loss and the best parameters are restored.
pub fn train_loop(
    model: &Eegnet,
    params: &mut ParamStore,
    train: &TrainData,
    val: Option<&TrainData>,
    cfg: &LoopConfig,
    rng: &mut SeededRng,
) -> Result<LoopOutcome> {
    let n = train.set.n_trials();
    if n == 0 {
        return Err(Error::invalid("training set", format!("phase `{}` has no trials", cfg.phase)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be positive"));
    }
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut out = LoopOutcome::default();
    let mut best: Option<(f64, ParamStore)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let fw = model.forward(&mut g, params, train.set.to_input(idx)?, true, rng)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.set.labels()[i]).collect();
            let loss = g.softmax_cross_entropy(fw.logits, &labels)?;
            g.backward(loss)?;
            sum += f64::from(g.value(loss).data()[0]) * idx.len() as f64;
            for (name, var) in &fw.bound {
                let grad = g.take_grad(*var).ok_or_else(|| Error::Missing(format!("gradient of `{name}`")))?;
                params
                    .get_mut(name)
                    .ok_or_else(|| Error::Missing(format!("parameter `{name}`")))?
                    .set_grad(grad)?;
            }
            params.adam_step(&adam)?;
            params.clear_grads();
            update_running_stats(params, &fw.bn_stats)?;
            out.audit.sessions.extend(idx.iter().map(|&i| train.origins[i]));
            out.audit.trial_steps += idx.len();
        }
        let train_loss = sum / n as f64;
        let val_loss = val.map(|v| eval_loss(model, params, v, cfg.batch_size.max(64))).transpose()?;
        out.history.push(EpochRecord {
            phase: cfg.phase.clone(),
            epoch,
            train_loss,
            val_loss,
            lr: cfg.lr,
        });
        debug!("{} epoch {epoch}: train {train_loss:.4} val {val_loss:?}", cfg.phase);
        match val_loss {
            Some(v) if best.as_ref().is_none_or(|(b, _)| v < *b) => {
                best = Some((v, params.clone()));
                out.best_epoch = epoch;
                since_best = 0;
            }
            Some(_) => {
                since_best += 1;
                if since_best >= cfg.patience {
                    out.stopped_early = true;
                    break;
                }
            }
            None => out.best_epoch = epoch,
        }
    }
    if let Some((_, kept)) = best {
        *params = kept;
    }
    Ok(out)
}
