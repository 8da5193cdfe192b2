mod common;

use common::*;
use mitl::metrics::*;
use mitl::tensor::{softmax_rows, Tensor};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn kappa_equals_tally_oracle_exactly() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let k = r.random_range(2..7);
        let n = r.random_range(2..200);
        let (pred, truth) = random_labels(&mut r, n, k);
        let got = kappa_with(KappaMode::Majority, &pred, &truth, k).unwrap();
        assert_eq!(got.to_bits(), kappa_tally(&pred, &truth).to_bits(), "{pred:?} {truth:?}");
    }
}

#[test]
fn balanced_chance_is_one_over_k() {
    for k in 2..12 {
        for per in 1..30 {
            let truth: Vec<usize> = (0..k * per).map(|i| i % k).collect();
            assert_eq!(chance_proportion(&truth, k).unwrap(), 1.0 / k as f64);
        }
    }
}

#[test]
fn kappa_reference_values() {
    let truth: Vec<usize> = (0..288).map(|i| i % 4).collect();
    let k = |p0: f64| kappa(p0, &truth, 4).unwrap();
    assert!((k(0.770) - 0.693_333_333_333_333).abs() < 1e-12);
    assert!((k(0.701) - 0.601_333_333_333_333).abs() < 1e-12);
    assert_eq!(k(0.25), 0.0);
    assert!(k(0.0) < 0.0);
}

#[test]
fn cohen_kappa_matches_marginal_oracle() {
    let mut r = rng(2);
    for _ in 0..300 {
        let k = r.random_range(2..5);
        let (pred, truth) = random_labels(&mut r, 60, k);
        let n = pred.len() as f64;
        let p0 = pred.iter().zip(&truth).filter(|(a, b)| a == b).count() as f64 / n;
        let pe: f64 = (0..k)
            .map(|c| {
                let a = pred.iter().filter(|&&p| p == c).count() as f64;
                let b = truth.iter().filter(|&&t| t == c).count() as f64;
                a * b / (n * n)
            })
            .sum();
        let got = kappa_with(KappaMode::Cohen, &pred, &truth, k).unwrap();
        assert!((got - (p0 - pe) / (1.0 - pe)).abs() < 1e-12);
    }
}

#[test]
fn degenerate_inputs_are_rejected() {
    assert!(kappa_with(KappaMode::Majority, &[0, 1], &[1, 1], 2).is_err());
    assert!(accuracy(&[0], &[0, 1]).is_err());
    assert!(accuracy(&[], &[]).is_err());
    assert!(confusion_matrix(&[2], &[0], 2).is_err());
    assert!("bogus".parse::<KappaMode>().is_err());
    assert_eq!("cohen".parse::<KappaMode>().unwrap(), KappaMode::Cohen);
}

fn random_probs(r: &mut impl Rng, n: usize, k: usize) -> Tensor {
    let logits = Tensor::from_fn(&[n, k], |_| r.random_range(-3.0f32..3.0));
    softmax_rows(&logits).unwrap()
}

/// Precision and recall of `score >= thr` by a direct count.
fn pr_at(scores: &[f32], positive: &[bool], thr: f32) -> (f64, f64) {
    let sel: Vec<bool> = scores.iter().map(|&s| s >= thr).collect();
    let tp = sel.iter().zip(positive).filter(|(s, p)| **s && **p).count() as f64;
    let chosen = sel.iter().filter(|s| **s).count() as f64;
    let pos = positive.iter().filter(|p| **p).count() as f64;
    (tp / chosen, tp / pos)
}

#[test]
fn pr_curve_points_match_threshold_counts() {
    let mut r = rng(3);
    for _ in 0..200 {
        let (n, k) = (r.random_range(5..60), r.random_range(2..5));
        let probs = random_probs(&mut r, n, k);
        let truth: Vec<usize> = (0..n).map(|i| if i < k { i } else { r.random_range(0..k) }).collect();
        for class in 0..k {
            let curve = precision_recall_curve(&probs, &truth, class).unwrap();
            assert_eq!(curve[0], PrPoint { threshold: None, precision: 1.0, recall: 0.0 });
            let scores: Vec<f32> = probs.data().chunks(k).map(|row| row[class]).collect();
            let positive: Vec<bool> = truth.iter().map(|&t| t == class).collect();
            for p in &curve[1..] {
                let (prec, rec) = pr_at(&scores, &positive, p.threshold.unwrap() as f32);
                assert_eq!((p.precision, p.recall), (prec, rec));
            }
            assert!(curve.windows(2).all(|w| w[0].recall <= w[1].recall));
            assert!(curve.windows(2).all(|w| match (w[0].threshold, w[1].threshold) {
                (Some(a), Some(b)) => a > b,
                _ => true,
            }));
            assert_eq!(curve.last().unwrap().recall, 1.0);
        }
    }
}

#[test]
fn pr_curve_of_uninformative_scores_tracks_prevalence() {
    let mut r = rng(4);
    let (n, k, runs) = (400, 4, 200);
    let mut mean_precision = 0.0;
    for _ in 0..runs {
        let probs = random_probs(&mut r, n, k);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let curve = precision_recall_curve(&probs, &truth, 0).unwrap();
        let mid = curve.iter().find(|p| p.recall >= 0.5).unwrap();
        mean_precision += mid.precision / runs as f64;
    }
    assert!((mean_precision - 0.25).abs() < 0.02, "{mean_precision}");
}

#[test]
fn pr_curve_rejects_bad_inputs() {
    let probs = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.9, 0.3]).unwrap();
    assert!(precision_recall_curve(&probs, &[0, 1], 0).is_err());
    let probs = Tensor::new(vec![2, 2], vec![0.5, 0.5, 0.7, 0.3]).unwrap();
    assert!(precision_recall_curve(&probs, &[0, 0], 1).is_err());
    assert!(precision_recall_curve(&probs, &[0, 0], 2).is_err());
}

#[test]
fn evaluation_report_files() {
    let mut r = rng(5);
    let probs = random_probs(&mut r, 40, 3);
    let truth: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let report = evaluate(&probs, &truth, &names, KappaMode::Majority).unwrap();
    assert_eq!(report.confusion.total(), 40);
    assert_eq!(report.chance, 0.5);
    assert_eq!(report.pr_curves.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
    for row in &report.confusion_percent[..2] {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }
    let dir = tempfile::tempdir().unwrap();
    let written = report.write(dir.path()).unwrap();
    assert_eq!(written.len(), 5);
    let back: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(back, report);
    let csv = std::fs::read_to_string(dir.path().join("confusion.csv")).unwrap();
    assert!(csv.starts_with("true_class,pred_a,pred_b,pred_c,pct_a"));
    let pr = std::fs::read_to_string(dir.path().join("pr_class0.csv")).unwrap();
    assert!(pr.lines().nth(1).unwrap().starts_with("inf,1,0"));
}

proptest! {
    #[test]
    fn kappa_is_one_iff_perfect(seed in 0u64..10_000, k in 2usize..6, n in 2usize..80) {
        let mut r = rng(seed);
        let (pred, truth) = random_labels(&mut r, n, k);
        let perfect = kappa_with(KappaMode::Majority, &truth, &truth, k).unwrap();
        prop_assert_eq!(perfect, 1.0);
        let kap = kappa_with(KappaMode::Majority, &pred, &truth, k).unwrap();
        prop_assert!(kap <= 1.0);
        prop_assert_eq!(kap == 1.0, pred == truth);
    }

    #[test]
    fn kappa_is_affine_in_accuracy(seed in 0u64..10_000, k in 2usize..6, n in 2usize..80) {
        let mut r = rng(seed);
        let (pred, truth) = random_labels(&mut r, n, k);
        let acc = accuracy(&pred, &truth).unwrap();
        let pe = chance_proportion(&truth, k).unwrap();
        let kap = kappa_with(KappaMode::Majority, &pred, &truth, k).unwrap();
        prop_assert!((kap * (1.0 - pe) + pe - acc).abs() < 1e-12);
    }

    #[test]
    fn confusion_marginals(seed in 0u64..10_000, k in 2usize..6, n in 1usize..80) {
        let mut r = rng(seed);
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let cm = confusion_matrix(&pred, &truth, k).unwrap();
        prop_assert_eq!(cm.total(), n);
        for c in 0..k {
            prop_assert_eq!(cm.row_sum(c), truth.iter().filter(|&&t| t == c).count());
            prop_assert_eq!(cm.col_sum(c), pred.iter().filter(|&&p| p == c).count());
        }
        prop_assert_eq!(cm.trace() as f64 / n as f64, accuracy(&pred, &truth).unwrap());
    }
}
