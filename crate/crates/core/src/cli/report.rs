use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::warn;
use serde::{Deserialize, Serialize};

use super::{RunManifest, RunStatus, RUN_MANIFEST};
use crate::blob;
use crate::metrics::{kappa_with, EvaluationReport, KappaMode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub strategy: String,
    pub run: String,
    pub subject: u32,
    pub n_classes: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rows: Vec<ReportRow>,
    /// Per group: (subjects, mean accuracy, mean kappa).
    pub means: BTreeMap<String, (usize, f64, f64)>,
}

/// Rebuild label pairs from the confusion counts and score them again.
fn recompute_kappa(report: &EvaluationReport, mode: KappaMode) -> crate::Result<f64> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (t, row) in report.confusion.counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            pred.extend(std::iter::repeat_n(p, c));
            truth.extend(std::iter::repeat_n(t, c));
        }
    }
    kappa_with(mode, &pred, &truth, report.confusion.n_classes())
}

fn subject_reports(run: &Path) -> anyhow::Result<Vec<(u32, EvaluationReport)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(run).with_context(|| format!("listing {}", run.display()))? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(id) = name.strip_prefix("subject").and_then(|s| s.parse::<u32>().ok()) else { continue };
        let report_path = path.join("report.json");
        if report_path.is_file() {
            out.push((id, blob::read_json(&report_path)?));
        }
    }
    out.sort_by_key(|(u, _)| *u);
    Ok(out)
}

/// Collect per-subject accuracy and kappa of every run into `summary.csv`,
/// per-group means into `strategy_means.csv`, and a subject-by-group
/// accuracy table into `grouped_bar.csv`.
pub fn cmd_report(runs: &[PathBuf], out: &Path, kappa: Option<KappaMode>) -> anyhow::Result<ReportSummary> {
    if runs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let mut rows = Vec::new();
    for run in runs {
        let manifest: RunManifest =
            blob::read_json(&run.join(RUN_MANIFEST)).with_context(|| format!("reading run {}", run.display()))?;
        if manifest.status != RunStatus::Completed {
            warn!("{} has status {:?}; skipped", run.display(), manifest.status);
            continue;
        }
        let name = run.file_name().map_or_else(|| run.display().to_string(), |n| n.to_string_lossy().into_owned());
        let strategy = manifest.config.plan.strategy.to_string();
        for (subject, report) in subject_reports(run)? {
            let k = match kappa {
                Some(mode) if mode != report.kappa_mode => recompute_kappa(&report, mode)?,
                _ => report.kappa,
            };
            rows.push(ReportRow {
                group: strategy.clone(),
                strategy: strategy.clone(),
                run: name.clone(),
                subject,
                n_classes: report.class_names.len(),
                n_test: report.n_test,
                accuracy: report.accuracy,
                kappa: k,
            });
        }
    }
    if rows.is_empty() {
        bail!("no completed subject reports found");
    }

    let mut classes: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for r in &rows {
        classes.entry(r.strategy.clone()).or_default().insert(r.n_classes);
    }
    for r in &mut rows {
        if classes[&r.strategy].len() > 1 {
            r.group = format!("{}@{}", r.strategy, r.run);
        }
    }
    for (s, ks) in &classes {
        if ks.len() > 1 {
            warn!("runs of {s} differ in class count {ks:?}; grouped per run");
        }
    }

    let mut means: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for r in &rows {
        let e = means.entry(r.group.clone()).or_insert((0, 0.0, 0.0));
        e.0 += 1;
        e.1 += r.accuracy;
        e.2 += r.kappa;
    }
    for e in means.values_mut() {
        e.1 /= e.0 as f64;
        e.2 /= e.0 as f64;
    }

    blob::create_dir(out)?;
    let mut csv = String::from("group,strategy,run,subject,n_classes,n_test,accuracy,kappa\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.group, r.strategy, r.run, r.subject, r.n_classes, r.n_test, r.accuracy, r.kappa
        );
    }
    blob::write_bytes(&out.join("summary.csv"), csv.as_bytes())?;

    let mut csv = String::from("group,n_subjects,mean_accuracy,mean_kappa\n");
    for (g, (n, a, k)) in &means {
        let _ = writeln!(csv, "{g},{n},{a},{k}");
    }
    blob::write_bytes(&out.join("strategy_means.csv"), csv.as_bytes())?;

    let groups: Vec<&String> = means.keys().collect();
    let mut by_subject: BTreeMap<u32, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in &rows {
        by_subject.entry(r.subject).or_default().insert(&r.group, r.accuracy);
    }
    let mut csv = String::from("subject");
    for g in &groups {
        let _ = write!(csv, ",{g}");
    }
    csv.push('\n');
    for (u, vals) in &by_subject {
        let _ = write!(csv, "{u}");
        for g in &groups {
            let _ = write!(csv, ",{}", vals.get(g.as_str()).map(|v| v.to_string()).unwrap_or_default());
        }
        csv.push('\n');
    }
    blob::write_bytes(&out.join("grouped_bar.csv"), csv.as_bytes())?;

    Ok(ReportSummary { rows, means })
}
