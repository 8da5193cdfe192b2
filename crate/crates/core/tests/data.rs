mod common;

use std::f64::consts::PI;

use common::rng;
use mitl::data::*;
use mitl::Error;
use proptest::prelude::*;
use rand::Rng;

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn random_set(seed: u64, trials: usize, channels: usize, samples: usize, classes: usize) -> EpochSet {
    let mut r = rng(seed);
    let data = (0..trials * channels * samples).map(|_| r.random_range(-5.0f32..5.0)).collect();
    let labels = (0..trials).map(|i| i % classes).collect();
    EpochSet::new(data, trials, channels, samples, labels, 1, 1, 250.0, names("E", channels), names("k", classes)).unwrap()
}

fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Bilinear-transformed Butterworth high-pass magnitude with prewarping.
fn butterworth_oracle(freq: f64, cutoff: f64, rate: f64, order: usize) -> f64 {
    if freq == 0.0 {
        return 0.0;
    }
    let wc = (PI * cutoff / rate).tan();
    let w = (PI * freq / rate).tan();
    1.0 / (1.0 + (wc / w).powi(2 * order as i32)).sqrt()
}

#[test]
fn filter_magnitude_matches_closed_form() {
    for (order, cutoff, rate) in [(4, 4.0, 250.0), (2, 1.0, 128.0), (5, 10.0, 500.0), (3, 0.5, 100.0)] {
        let f = Butterworth::highpass(order, cutoff, rate).unwrap();
        for i in 0..200 {
            let freq = rate / 2.0 * i as f64 / 200.0;
            let got = f.magnitude(freq, rate);
            let want = butterworth_oracle(freq, cutoff, rate, order);
            assert!((got - want).abs() < 1e-9, "order {order} at {freq} Hz: {got} vs {want}");
        }
        let half_power = f.magnitude(cutoff, rate);
        assert!((half_power - 0.5f64.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn filtfilt_squares_the_steady_state_gain() {
    let rate = 250.0;
    let f = Butterworth::highpass(4, 4.0, rate).unwrap();
    for freq in [3.0, 4.0, 6.0, 10.0, 40.0] {
        let x = sine(freq, rate, 2500);
        let y = f.filtfilt(&x);
        let mid = 750..1750;
        let ratio = rms(&y[mid.clone()]) / rms(&x[mid]);
        let want = f.magnitude(freq, rate).powi(2);
        assert!((ratio - want).abs() < 0.01, "{freq} Hz: {ratio} vs {want}");
    }
}

#[test]
fn filter_contract_dc_passband_and_zero_phase() {
    let rate = 250.0;
    let f = Butterworth::highpass(4, 4.0, rate).unwrap();
    let dc = vec![1.0; 1000];
    let out = f.filtfilt(&dc);
    let atten_db = -20.0 * (rms(&out) / rms(&dc)).log10();
    assert!(atten_db >= 60.0, "{atten_db} dB");

    let x = sine(20.0, rate, 1000);
    let y = f.filtfilt(&x);
    let ripple = (rms(&y[100..900]) / rms(&x[100..900]) - 1.0).abs();
    assert!(ripple <= 0.02, "{ripple}");

    let lag = best_lag(&x, &y, 12);
    assert_eq!(lag, 0);
}

/// Lag in `-max..=max` maximizing the cross-correlation of `x` and `y`.
fn best_lag(x: &[f64], y: &[f64], max: i64) -> i64 {
    let n = x.len() as i64;
    (-max..=max)
        .max_by(|&a, &b| {
            let c = |lag: i64| -> f64 {
                (max..n - max).map(|i| x[i as usize] * y[(i + lag) as usize]).sum()
            };
            c(a).partial_cmp(&c(b)).unwrap()
        })
        .unwrap()
}

#[test]
fn filtering_twice_barely_changes_the_passband() {
    let probe: Vec<f32> = sine(20.0, 250.0, 500).iter().map(|&v| v as f32).collect();
    let data: Vec<f32> = (0..4).flat_map(|_| probe.clone()).collect();
    let set = EpochSet::new(data, 2, 2, 500, vec![0, 1], 1, 1, 250.0, names("E", 2), names("k", 2)).unwrap();
    let spec = FilterSpec::default();
    let once = highpass_filter(&set, &spec).unwrap();
    let twice = highpass_filter(&once, &spec).unwrap();
    let a: Vec<f64> = once.channel(0, 0)[50..450].iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = twice.channel(0, 0)[50..450].iter().map(|&v| f64::from(v)).collect();
    assert!((rms(&b) / rms(&a) - 1.0).abs() <= 0.04);
}

#[test]
fn filter_spec_is_validated() {
    let set = random_set(2, 2, 2, 64, 2);
    for spec in [
        FilterSpec { cutoff_hz: 0.0, order: 4 },
        FilterSpec { cutoff_hz: 125.0, order: 4 },
        FilterSpec { cutoff_hz: 4.0, order: 0 },
    ] {
        assert!(matches!(highpass_filter(&set, &spec), Err(Error::InvalidArgument { .. })));
    }
}

#[test]
fn epoch_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = random_set(3, 6, 3, 40, 3);
    set.subject_id = 4;
    set.session_id = 2;
    save_epochset(&set, dir.path()).unwrap();
    let back = load_epochset(dir.path()).unwrap();
    assert_eq!(back, set);
    assert!(back.data().iter().zip(set.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(back.key(), SessionKey::new(4, 2));
}

#[test]
fn epoch_corruption_truncation_and_version_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(4, 288, 2, 8, 4);
    save_epochset(&set, dir.path()).unwrap();
    let blob = dir.path().join("epochs.bin");
    let clean = std::fs::read(&blob).unwrap();

    let mut r = rng(5);
    for _ in 0..50 {
        let mut bytes = clean.clone();
        let i = r.random_range(0..bytes.len());
        bytes[i] = bytes[i].wrapping_add(r.random_range(1..=255));
        std::fs::write(&blob, &bytes).unwrap();
        assert!(matches!(load_epochset(dir.path()), Err(Error::Checksum { .. })));
    }

    std::fs::write(&blob, &clean[..287 * 2 * 8 * 4]).unwrap();
    let err = load_epochset(dir.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("n_trials") && msg.contains("288") && msg.contains("287"), "{msg}");
    std::fs::write(&blob, &clean).unwrap();

    let mpath = dir.path().join("manifest.json");
    let mut json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&mpath).unwrap()).unwrap();
    json["format_version"] = 2.into();
    std::fs::write(&mpath, json.to_string()).unwrap();
    assert!(matches!(load_epochset(dir.path()), Err(Error::Version { found: 2, .. })));
}

#[test]
fn labels_and_shapes_are_validated() {
    let err = EpochSet::new(vec![0.0; 8], 2, 2, 2, vec![0, 3], 1, 1, 250.0, names("E", 2), names("k", 2)).unwrap_err();
    assert!(err.to_string().contains("label 3"), "{err}");
    assert!(EpochSet::new(vec![0.0; 7], 2, 2, 2, vec![0, 1], 1, 1, 250.0, names("E", 2), names("k", 2)).is_err());
    let dup = vec!["C3".to_string(), "C3".to_string()];
    assert!(EpochSet::new(vec![0.0; 8], 2, 2, 2, vec![0, 1], 1, 1, 250.0, dup, names("k", 2)).is_err());
}

#[test]
fn channel_selection_orders_and_rejects_unknown_names() {
    let set = random_set(6, 3, 4, 10, 3);
    let sel = set.select_channels(&["E2", "E0"]).unwrap();
    assert_eq!(sel.channel_names(), ["E2", "E0"]);
    for t in 0..3 {
        assert_eq!(sel.channel(t, 0), set.channel(t, 2));
        assert_eq!(sel.channel(t, 1), set.channel(t, 0));
    }
    assert!(set.select_channels(&["E9"]).is_err());
}

#[test]
fn filtering_commutes_with_channel_selection() {
    let set = random_set(7, 3, 5, 200, 3);
    let spec = FilterSpec::default();
    let pick = ["E4", "E1", "E2"];
    let a = highpass_filter(&set, &spec).unwrap().select_channels(&pick).unwrap();
    let b = highpass_filter(&set.select_channels(&pick).unwrap(), &spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn standardization_reuses_supplied_statistics() {
    let train = random_set(8, 10, 3, 50, 2);
    let test = random_set(9, 4, 3, 50, 2);
    let (_, stats) = standardize(&train, None).unwrap();
    let (applied, same) = standardize(&test, Some(&stats)).unwrap();
    assert_eq!(same, stats);
    let v = test.channel(1, 2)[3];
    let w = applied.channel(1, 2)[3];
    assert!((w - (v - stats.mean[2]) / stats.std[2]).abs() < 1e-6);

    let flat = EpochSet::new(vec![2.0; 20], 2, 1, 10, vec![0, 1], 1, 1, 250.0, names("E", 1), names("k", 2)).unwrap();
    let (z, s) = standardize(&flat, None).unwrap();
    assert!((s.std[0] as f64 - VARIANCE_FLOOR.sqrt()).abs() < 1e-9);
    assert!(z.data().iter().all(|v| v.is_finite() && *v == 0.0));
}

proptest! {
    #[test]
    fn standardized_channels_have_zero_mean_unit_variance(
        seed in 0u64..500, trials in 2usize..6, channels in 1usize..4, samples in 4usize..40
    ) {
        let set = random_set(seed, trials, channels, samples, 2);
        let (z, _) = standardize(&set, None).unwrap();
        for ch in 0..channels {
            let vals: Vec<f64> = (0..trials).flat_map(|t| z.channel(t, ch).iter().map(|&v| f64::from(v))).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-4);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn epoch_files_round_trip(seed in 0u64..500, trials in 1usize..5, channels in 1usize..4, samples in 1usize..20) {
        let dir = tempfile::tempdir().unwrap();
        let set = random_set(seed, trials, channels, samples, 2);
        save_epochset(&set, dir.path()).unwrap();
        prop_assert_eq!(load_epochset(dir.path()).unwrap(), set);
    }
}

/// Power of one channel between `lo` and `hi` Hz by a direct DFT.
fn band_power(x: &[f32], rate: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * rate / n as f64;
            f >= lo && f <= hi
        })
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = 2.0 * PI * (k * i) as f64 / n as f64;
                re += f64::from(v) * a.cos();
                im -= f64::from(v) * a.sin();
            }
            re * re + im * im
        })
        .sum()
}

fn features(set: &EpochSet, trial: usize) -> Vec<f64> {
    (0..set.n_channels())
        .map(|ch| band_power(set.channel(trial, ch), set.sample_rate_hz, 8.0, 30.0).ln())
        .collect()
}

#[test]
fn synthetic_classes_are_separable_by_band_power() {
    let mut cfg = SynthConfig::new(3, 48, 6, 128, 4);
    cfg.sample_rate_hz = 128.0;
    cfg.seed = 11;
    let d = synth_generate(&cfg).unwrap();
    for u in 1..=3 {
        let train = &d[&SessionKey::new(u, 1)];
        let test = &d[&SessionKey::new(u, 2)];
        let mut centroids = vec![vec![0.0; 6]; 4];
        for t in 0..train.n_trials() {
            for (c, f) in centroids[train.labels()[t]].iter_mut().zip(features(train, t)) {
                *c += f / 12.0;
            }
        }
        let correct = (0..test.n_trials())
            .filter(|&t| {
                let f = features(test, t);
                let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let pred = (0..4).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
                pred == test.labels()[t]
            })
            .count();
        let acc = correct as f64 / test.n_trials() as f64;
        assert!(acc >= 0.95, "subject {u}: {acc}");
    }
}

#[test]
fn synthetic_default_montages() {
    let d = synth_generate(&SynthConfig::new(1, 4, 25, 64, 4)).unwrap();
    let set = d.values().next().unwrap();
    assert_eq!(set.channel_names(), MONTAGE_25);
    assert_eq!(set.class_names(), ["left", "right", "feet", "tongue"]);
    assert_eq!(set.channel_names().iter().filter(|n| is_eog(n)).count(), 3);
}
