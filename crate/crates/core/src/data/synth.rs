//! Synthetic motor-imagery sessions.
//!
//! Each trial is pink background noise on every channel plus a sensorimotor
//! rhythm (a sinusoid between 8 and 30 Hz) whose amplitude is raised on the
//! channels assigned to the trial's class. Every subject sees the channels
//! through its own mixing matrix `I + difficulty·G`, with `G` Gaussian, so
//! difficulty 0 makes all subjects statistically identical.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Datasets, EpochSet, SessionKey, MONTAGE_25, TRANSFER_CHANNELS};
use crate::error::{Error, Result};
use crate::rng::derive_rng;

const BACKGROUND_AMPLITUDE: f64 = 0.4;
const CLASS_AMPLITUDE: f64 = 2.0;
const NOISE_SCALE: f64 = 0.1;
const RHYTHM_BAND_HZ: (f64, f64) = (10.0, 26.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Trials in each session unless `session_trials` overrides it.
    pub n_trials: usize,
    #[serde(default)]
    pub session_trials: Option<[usize; 2]>,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub difficulty: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub channel_names: Option<Vec<String>>,
    /// Channels carrying each class's rhythm. Defaults to channel `c` for
    /// class `c mod n_classes`.
    #[serde(default)]
    pub class_channels: Option<Vec<Vec<String>>>,
}

fn default_rate() -> f64 {
    250.0
}

impl SynthConfig {
    pub fn new(n_subjects: usize, n_trials: usize, n_channels: usize, n_samples: usize, n_classes: usize) -> Self {
        SynthConfig {
            n_subjects,
            n_trials,
            session_trials: None,
            n_channels,
            n_samples,
            n_classes,
            sample_rate_hz: default_rate(),
            difficulty: 0.0,
            seed: 0,
            channel_names: None,
            class_channels: None,
        }
    }

    pub fn trials_per_session(&self) -> [usize; 2] {
        self.session_trials.unwrap_or([self.n_trials; 2])
    }

    pub fn resolved_channel_names(&self) -> Vec<String> {
        if let Some(names) = &self.channel_names {
            return names.clone();
        }
        match self.n_channels {
            25 => MONTAGE_25.iter().map(|s| s.to_string()).collect(),
            22 => MONTAGE_25[..22].iter().map(|s| s.to_string()).collect(),
            6 => TRANSFER_CHANNELS.iter().map(|s| s.to_string()).collect(),
            3 => ["C3", "Cz", "C4"].map(String::from).to_vec(),
            c => (0..c).map(|i| format!("Ch{i}")).collect(),
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self.n_classes {
            2 => ["left", "right"].map(String::from).to_vec(),
            4 => ["left", "right", "feet", "tongue"].map(String::from).to_vec(),
            k => (0..k).map(|i| format!("class{i}")).collect(),
        }
    }

    fn class_masks(&self, names: &[String]) -> Result<Vec<Vec<bool>>> {
        let c = self.n_channels;
        let masks: Vec<Vec<bool>> = match &self.class_channels {
            None => (0..self.n_classes)
                .map(|k| (0..c).map(|ch| ch % self.n_classes == k).collect())
                .collect(),
            Some(lists) => {
                if lists.len() != self.n_classes {
                    return Err(Error::Config(format!(
                        "class_channels has {} entries for {} classes",
                        lists.len(),
                        self.n_classes
                    )));
                }
                let mut masks = Vec::new();
                for list in lists {
                    let mut m = vec![false; c];
                    for n in list {
                        let i = names
                            .iter()
                            .position(|x| x == n)
                            .ok_or_else(|| Error::Config(format!("class_channels names unknown channel `{n}`")))?;
                        m[i] = true;
                    }
                    masks.push(m);
                }
                masks
            }
        };
        if let Some(k) = masks.iter().position(|m| !m.contains(&true)) {
            return Err(Error::Config(format!(
                "class {k} has no signal channel; with {} channels and {} classes provide class_channels",
                c, self.n_classes
            )));
        }
        Ok(masks)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_subjects", self.n_subjects),
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("synth {name} must be positive")));
            }
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("synth n_classes must be at least 2, got {}", self.n_classes)));
        }
        for t in self.trials_per_session() {
            if t == 0 || t % self.n_classes != 0 {
                return Err(Error::Config(format!(
                    "synth session of {t} trials cannot be split evenly into {} classes",
                    self.n_classes
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.difficulty) {
            return Err(Error::Config(format!("synth difficulty must lie in [0, 1], got {}", self.difficulty)));
        }
        if !(self.sample_rate_hz > 2.0 * RHYTHM_BAND_HZ.1) {
            return Err(Error::Config(format!(
                "synth sample_rate_hz {} cannot carry a {} Hz rhythm",
                self.sample_rate_hz, RHYTHM_BAND_HZ.1
            )));
        }
        let names = self.resolved_channel_names();
        if names.len() != self.n_channels {
            return Err(Error::Config(format!(
                "synth channel_names lists {} names for {} channels",
                names.len(),
                self.n_channels
            )));
        }
        self.class_masks(&names)?;
        Ok(())
    }
}

/// Pink noise by Kellett's three-pole approximation, started from the
/// stationary distribution of the filter state.
fn pink_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> impl Iterator<Item = f64> + '_ {
    const POLES: [(f64, f64); 3] = [(0.99765, 0.0990460), (0.96300, 0.2965164), (0.57000, 1.0526913)];
    let mut state = POLES.map(|(a, c)| {
        let z: f64 = rng.sample(StandardNormal);
        z * c / (1.0 - a * a).sqrt()
    });
    (0..n).map(move |_| {
        let w: f64 = rng.sample(StandardNormal);
        let mut out = w * 0.1848;
        for (s, (a, c)) in state.iter_mut().zip(POLES) {
            *s = a * *s + w * c;
            out += *s;
        }
        out * NOISE_SCALE
    })
}

fn balanced_labels<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(rng);
    labels
}

/// Generate two sessions for each subject, numbered from 1.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Datasets> {
    cfg.validate()?;
    let names = cfg.resolved_channel_names();
    let masks = cfg.class_masks(&names)?;
    let classes = cfg.class_names();
    let (c, t) = (cfg.n_channels, cfg.n_samples);
    let mut out = Datasets::new();
    for subject in 1..=cfg.n_subjects as u32 {
        let mut mix_rng = derive_rng(cfg.seed, &format!("synth/subject{subject}/mixing"));
        let scale = 1.0 / (c as f64).sqrt();
        let mixing: Vec<f64> = (0..c * c)
            .map(|i| {
                let g: f64 = mix_rng.sample(StandardNormal);
                let eye = if i / c == i % c { 1.0 } else { 0.0 };
                eye + cfg.difficulty * g * scale
            })
            .collect();
        for (si, &n_trials) in cfg.trials_per_session().iter().enumerate() {
            let session = si as u32 + 1;
            let mut rng = derive_rng(cfg.seed, &format!("synth/subject{subject}/session{session}"));
            let labels = balanced_labels(n_trials, cfg.n_classes, &mut rng);
            let mut data = Vec::with_capacity(n_trials * c * t);
            let mut source = vec![0.0f64; c * t];
            for &label in &labels {
                let freq = rng.random_range(RHYTHM_BAND_HZ.0..RHYTHM_BAND_HZ.1);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                let gain = rng.random_range(0.8..1.2);
                let w = std::f64::consts::TAU * freq / cfg.sample_rate_hz;
                for ch in 0..c {
                    let amp = gain * if masks[label][ch] { CLASS_AMPLITUDE } else { BACKGROUND_AMPLITUDE };
                    let row = &mut source[ch * t..(ch + 1) * t];
                    for (i, (v, noise)) in row.iter_mut().zip(pink_noise(t, &mut rng)).enumerate() {
                        *v = amp * (w * i as f64 + phase).sin() + noise;
                    }
                }
                for out_ch in 0..c {
                    let m = &mixing[out_ch * c..(out_ch + 1) * c];
                    for i in 0..t {
                        let v: f64 = m.iter().enumerate().map(|(j, &mj)| mj * source[j * t + i]).sum();
                        data.push(v as f32);
                    }
                }
            }
            let set = EpochSet::new(
                data,
                n_trials,
                c,
                t,
                labels,
                subject,
                session,
                cfg.sample_rate_hz,
                names.clone(),
                classes.clone(),
            )?;
            out.insert(SessionKey::new(subject, session), set);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let mut cfg = SynthConfig::new(2, 8, 6, 64, 4);
        cfg.difficulty = 0.3;
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for set in a.values() {
            assert_eq!(set.class_histogram(), vec![2; 4]);
            assert_eq!(set.channel_names(), TRANSFER_CHANNELS);
        }
        cfg.seed = 1;
        assert_ne!(synth_generate(&cfg).unwrap(), a);
    }

    #[test]
    fn sessions_differ() {
        let d = synth_generate(&SynthConfig::new(1, 4, 3, 32, 2)).unwrap();
        assert_ne!(d[&SessionKey::new(1, 1)].data(), d[&SessionKey::new(1, 2)].data());
    }

    #[test]
    fn session_sizes_and_validation() {
        let mut cfg = SynthConfig::new(1, 8, 3, 32, 2);
        cfg.session_trials = Some([4, 6]);
        let d = synth_generate(&cfg).unwrap();
        assert_eq!(d[&SessionKey::new(1, 1)].n_trials(), 4);
        assert_eq!(d[&SessionKey::new(1, 2)].n_trials(), 6);
        cfg.difficulty = 1.5;
        assert!(synth_generate(&cfg).is_err());
        let uneven = SynthConfig::new(1, 5, 3, 32, 2);
        assert!(synth_generate(&uneven).is_err());
        let starved = SynthConfig::new(1, 8, 3, 32, 4);
        assert!(synth_generate(&starved).is_err());
    }
}
