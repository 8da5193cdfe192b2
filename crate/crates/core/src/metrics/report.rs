use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{accuracy, argmax_rows, chance_proportion, confusion_matrix, kappa_with, precision_recall_curve};
use super::{ConfusionMatrix, KappaMode, PrPoint};
use crate::blob::{write_bytes, write_json};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub accuracy: f64,
    pub kappa: f64,
    pub kappa_mode: KappaMode,
    /// Most-frequent-class proportion of the test labels.
    pub chance: f64,
    pub class_names: Vec<String>,
    pub confusion: ConfusionMatrix,
    pub confusion_percent: Vec<Vec<f64>>,
    /// Keyed by class index; classes absent from the test labels have no curve.
    pub pr_curves: BTreeMap<usize, Vec<PrPoint>>,
    #[serde(default)]
    pub history: Vec<EpochRecord>,
}

/// Score `probs` (`[N, K]` class probabilities) against `truth`.
pub fn evaluate(probs: &Tensor, truth: &[usize], class_names: &[String], mode: KappaMode) -> Result<EvaluationReport> {
    let k = class_names.len();
    if probs.shape().len() != 2 || probs.shape()[1] != k {
        return Err(Error::shape(
            "scores",
            format!("expected [N, {k}] for {k} classes, got {:?}", probs.shape()),
        ));
    }
    let pred = argmax_rows(probs)?;
    let confusion = confusion_matrix(&pred, truth, k)?;
    let mut pr_curves = BTreeMap::new();
    for class in 0..k {
        if confusion.row_sum(class) > 0 {
            pr_curves.insert(class, precision_recall_curve(probs, truth, class)?);
        }
    }
    Ok(EvaluationReport {
        n_test: truth.len(),
        accuracy: accuracy(&pred, truth)?,
        kappa: kappa_with(mode, &pred, truth, k)?,
        kappa_mode: mode,
        chance: chance_proportion(truth, k)?,
        class_names: class_names.to_vec(),
        confusion_percent: confusion.row_percentages(),
        confusion,
        pr_curves,
        history: Vec::new(),
    })
}

impl EvaluationReport {
    /// Write `report.json`, `confusion.csv`, `pr_class<k>.csv` and
    /// `history.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        crate::blob::create_dir(dir)?;
        let mut written = Vec::new();

        let path = dir.join("report.json");
        write_json(&path, self)?;
        written.push(path);

        let mut csv = String::from("true_class");
        for name in &self.class_names {
            let _ = write!(csv, ",pred_{name}");
        }
        for name in &self.class_names {
            let _ = write!(csv, ",pct_{name}");
        }
        csv.push('\n');
        for (i, name) in self.class_names.iter().enumerate() {
            csv.push_str(name);
            for c in &self.confusion.counts[i] {
                let _ = write!(csv, ",{c}");
            }
            for p in &self.confusion_percent[i] {
                let _ = write!(csv, ",{p:.4}");
            }
            csv.push('\n');
        }
        let path = dir.join("confusion.csv");
        write_bytes(&path, csv.as_bytes())?;
        written.push(path);

        for (k, curve) in &self.pr_curves {
            let mut csv = String::from("threshold,precision,recall\n");
            for p in curve {
                match p.threshold {
                    Some(t) => {
                        let _ = write!(csv, "{t}");
                    }
                    None => csv.push_str("inf"),
                }
                let _ = writeln!(csv, ",{},{}", p.precision, p.recall);
            }
            let path = dir.join(format!("pr_class{k}.csv"));
            write_bytes(&path, csv.as_bytes())?;
            written.push(path);
        }

        let path = dir.join("history.csv");
        write_history_csv(&path, &self.history)?;
        written.push(path);
        Ok(written)
    }
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut csv = String::from("phase,epoch,train_loss,val_loss,lr\n");
    for r in history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", r.phase, r.epoch, r.train_loss, val, r.lr);
    }
    write_bytes(path, csv.as_bytes())
}
