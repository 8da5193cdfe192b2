//! Classification metrics.

mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{evaluate, write_history_csv, EpochRecord, EvaluationReport};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_pair(pred: &[usize], truth: &[usize]) -> Result<usize> {
    if pred.len() != truth.len() {
        return Err(Error::shape(
            "predictions",
            format!("{} predictions for {} labels", pred.len(), truth.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::invalid("labels", "need at least one trial"));
    }
    Ok(truth.len())
}

fn check_range(labels: &[usize], n_classes: usize, what: &str) -> Result<()> {
    match labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
        Some((i, l)) => Err(Error::invalid(
            what,
            format!("entry {i} is {l}, valid range is 0..{}", n_classes.saturating_sub(1)),
        )),
        None => Ok(()),
    }
}

/// Fraction of exact matches.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let n = check_pair(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / n as f64)
}

/// How the chance proportion `pe` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KappaMode {
    /// Proportion of the most frequent class in the truth labels.
    #[default]
    Majority,
    /// Expected agreement of independent raters with the observed marginals.
    Cohen,
}

impl fmt::Display for KappaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KappaMode::Majority => "majority",
            KappaMode::Cohen => "cohen",
        })
    }
}

impl FromStr for KappaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(KappaMode::Majority),
            "cohen" => Ok(KappaMode::Cohen),
            other => Err(Error::invalid("kappa", format!("`{other}` is not one of majority, cohen"))),
        }
    }
}

/// Proportion of the most frequent class among `truth`.
pub fn chance_proportion(truth: &[usize], n_classes: usize) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("labels", "need at least one trial"));
    }
    check_range(truth, n_classes, "labels")?;
    let mut counts = vec![0usize; n_classes];
    for &t in truth {
        counts[t] += 1;
    }
    let top = counts.into_iter().max().unwrap_or(0);
    Ok(top as f64 / truth.len() as f64)
}

fn chance_corrected(p0: f64, pe: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::invalid("p0", format!("{p0} is not a proportion")));
    }
    if pe >= 1.0 {
        return Err(Error::invalid("kappa", "undefined when chance agreement is 1 (single-class truth)"));
    }
    Ok((p0 - pe) / (1.0 - pe))
}

/// `(p0 - pe) / (1 - pe)` with `pe` the most-frequent-class proportion.
pub fn kappa(p0: f64, truth: &[usize], n_classes: usize) -> Result<f64> {
    chance_corrected(p0, chance_proportion(truth, n_classes)?)
}

/// Conventional Cohen's kappa.
pub fn cohen_kappa(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    let cm = confusion_matrix(pred, truth, n_classes)?;
    let n = cm.total() as f64;
    let pe = (0..n_classes)
        .map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64)
        .sum::<f64>()
        / (n * n);
    chance_corrected(cm.trace() as f64 / n, pe)
}

pub fn kappa_with(mode: KappaMode, pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
    match mode {
        KappaMode::Majority => {
            check_range(pred, n_classes, "predictions")?;
            kappa(accuracy(pred, truth)?, truth, n_classes)
        }
        KappaMode::Cohen => cohen_kappa(pred, truth, n_classes),
    }
}

/// Counts with rows indexed by truth and columns by prediction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Each row as percentages of that class's trials; empty rows stay 0.
    pub fn row_percentages(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if s == 0 { 0.0 } else { 100.0 * c as f64 / s as f64 })
                    .collect()
            })
            .collect()
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    check_pair(pred, truth)?;
    check_range(truth, n_classes, "labels")?;
    check_range(pred, n_classes, "predictions")?;
    let mut counts = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Row-wise argmax of a score matrix; ties go to the lower class.
pub fn argmax_rows(scores: &Tensor) -> Result<Vec<usize>> {
    let (_, k) = score_dims(scores)?;
    Ok(scores
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

fn score_dims(scores: &Tensor) -> Result<(usize, usize)> {
    match *scores.shape() {
        [n, k] => Ok((n, k)),
        ref s => Err(Error::shape("scores", format!("expected [N, K], got {s:?}"))),
    }
}

/// One operating point of a precision-recall sweep. `threshold` is absent
/// for the starting point above every score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: Option<f64>,
    pub precision: f64,
    pub recall: f64,
}

/// One-vs-rest precision-recall curve for `class`, swept from the highest
/// threshold down. The first point is recall 0 with precision 1.
pub fn precision_recall_curve(scores: &Tensor, truth: &[usize], class: usize) -> Result<Vec<PrPoint>> {
    let (n, k) = score_dims(scores)?;
    if truth.len() != n {
        return Err(Error::shape("labels", format!("{} labels for {n} score rows", truth.len())));
    }
    if class >= k {
        return Err(Error::invalid("class", format!("{class} out of {k} classes")));
    }
    check_range(truth, k, "labels")?;
    for (i, row) in scores.data().chunks(k).enumerate() {
        let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::invalid("scores", format!("row {i} sums to {s}, expected probabilities")));
        }
    }
    let positives = truth.iter().filter(|&&t| t == class).count();
    if positives == 0 {
        return Err(Error::invalid("class", format!("class {class} does not occur, recall is undefined")));
    }
    let mut order: Vec<(f32, bool)> = (0..n).map(|i| (scores.data()[i * k + class], truth[i] == class)).collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut curve = vec![PrPoint {
        threshold: None,
        precision: 1.0,
        recall: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let thr = order[i].0;
        while i < order.len() && order[i].0 == thr {
            if order[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = PrPoint {
            threshold: Some(f64::from(thr)),
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / positives as f64,
        };
        let last = curve.last().expect("curve starts non-empty");
        if last.precision != p.precision || last.recall != p.recall {
            curve.push(p);
        }
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_examples() {
        let balanced: Vec<usize> = (0..100).map(|i| i % 4).collect();
        assert_eq!(chance_proportion(&balanced, 4).unwrap(), 0.25);
        assert_eq!(kappa(0.25, &balanced, 4).unwrap(), 0.0);
        assert_eq!(kappa(1.0, &balanced, 4).unwrap(), 1.0);
        assert!((kappa(0.770, &balanced, 4).unwrap() - 0.693_333_333_333).abs() < 1e-9);
        assert!(kappa(1.0, &[2, 2, 2], 4).is_err());
    }

    #[test]
    fn confusion_example() {
        let cm = confusion_matrix(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(cm.row_percentages()[0], vec![50.0, 50.0]);
        assert!(confusion_matrix(&[0], &[2], 2).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cohen".parse::<KappaMode>().unwrap(), KappaMode::Cohen);
        assert!("fleiss".parse::<KappaMode>().is_err());
    }

    #[test]
    fn cohen_on_perfect_and_chance() {
        assert_eq!(cohen_kappa(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(), 0.0);
    }
}
