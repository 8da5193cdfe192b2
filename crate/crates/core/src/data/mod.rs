//! Epoched EEG trials and everything done to them before training.

mod filter;
mod io;
mod split;
mod standardize;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use filter::{highpass_filter, Butterworth, FilterSpec};
pub use io::{load_epochset, save_epochset, EPOCH_FORMAT_VERSION};
pub use split::{make_split, SplitAssignment};
pub use standardize::{standardize, ChannelStats, VARIANCE_FLOOR};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Identifies one recording session of one subject. Sessions count from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionKey {
    pub subject: u32,
    pub session: u32,
}

impl SessionKey {
    pub fn new(subject: u32, session: u32) -> Self {
        SessionKey { subject, session }
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(subject {}, session {})", self.subject, self.session)
    }
}

/// All sessions available to an experiment.
pub type Datasets = BTreeMap<SessionKey, EpochSet>;

/// Distinct subjects in `datasets`, ascending.
pub fn subjects(datasets: &Datasets) -> Vec<u32> {
    let mut s: Vec<u32> = datasets.keys().map(|k| k.subject).collect();
    s.dedup();
    s
}

/// Labeled trials of one session, stored `[trial][channel][sample]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSet {
    data: Vec<f32>,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    labels: Vec<usize>,
    pub subject_id: u32,
    pub session_id: u32,
    pub sample_rate_hz: f64,
    channel_names: Vec<String>,
    class_names: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
impl EpochSet {
    pub fn new(
        data: Vec<f32>,
        n_trials: usize,
        n_channels: usize,
        n_samples: usize,
        labels: Vec<usize>,
        subject_id: u32,
        session_id: u32,
        sample_rate_hz: f64,
        channel_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let set = EpochSet {
            data,
            n_trials,
            n_channels,
            n_samples,
            labels,
            subject_id,
            session_id,
            sample_rate_hz,
            channel_names,
            class_names,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let expect = self.n_trials * self.n_channels * self.n_samples;
        if self.data.len() != expect {
            return Err(Error::shape(
                "data",
                format!(
                    "{} trials x {} channels x {} samples needs {expect} values, got {}",
                    self.n_trials,
                    self.n_channels,
                    self.n_samples,
                    self.data.len()
                ),
            ));
        }
        if self.labels.len() != self.n_trials {
            return Err(Error::shape(
                "labels",
                format!("{} labels for {} trials", self.labels.len(), self.n_trials),
            ));
        }
        if self.channel_names.len() != self.n_channels {
            return Err(Error::shape(
                "channel_names",
                format!("{} names for {} channels", self.channel_names.len(), self.n_channels),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.channel_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::invalid("channel_names", format!("duplicate channel `{dup}`")));
        }
        if self.class_names.is_empty() {
            return Err(Error::invalid("class_names", "at least one class is required"));
        }
        let k = self.class_names.len();
        if let Some((i, &l)) = self.labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::invalid(
                "labels",
                format!("trial {i} has label {l}, valid range is 0..{}", k - 1),
            ));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample_rate_hz", "must be positive"));
        }
        Ok(())
    }

    pub fn key(&self) -> SessionKey {
        SessionKey::new(self.subject_id, self.session_id)
    }

    pub fn n_trials(&self) -> usize {
        self.n_trials
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let n = self.n_channels * self.n_samples;
        &self.data[i * n..(i + 1) * n]
    }

    pub fn channel(&self, trial: usize, ch: usize) -> &[f32] {
        let start = (trial * self.n_channels + ch) * self.n_samples;
        &self.data[start..start + self.n_samples]
    }

    pub(crate) fn map_channels(&self, mut f: impl FnMut(&[f32], usize) -> Vec<f32>) -> EpochSet {
        let mut data = Vec::with_capacity(self.data.len());
        for chunk in self.data.chunks(self.n_samples) {
            let ch = (data.len() / self.n_samples) % self.n_channels;
            data.extend(f(chunk, ch));
        }
        EpochSet { data, ..self.clone() }
    }

    /// A subset of trials in the given order.
    pub fn subset(&self, trials: &[usize]) -> Result<EpochSet> {
        if let Some(&bad) = trials.iter().find(|&&t| t >= self.n_trials) {
            return Err(Error::invalid("trial index", format!("{bad} out of {}", self.n_trials)));
        }
        let mut data = Vec::with_capacity(trials.len() * self.n_channels * self.n_samples);
        for &t in trials {
            data.extend_from_slice(self.trial(t));
        }
        Ok(EpochSet {
            data,
            n_trials: trials.len(),
            labels: trials.iter().map(|&t| self.labels[t]).collect(),
            ..self.clone()
        })
    }

    /// `[N, 1, channels, samples]` model input for the given trials.
    pub fn to_input(&self, trials: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(trials.len() * self.n_channels * self.n_samples);
        for &t in trials {
            data.extend_from_slice(self.trial(t));
        }
        Tensor::new(vec![trials.len(), 1, self.n_channels, self.n_samples], data)
    }

    /// Keep the named channels, in the requested order.
    pub fn select_channels<S: AsRef<str>>(&self, names: &[S]) -> Result<EpochSet> {
        if names.is_empty() {
            return Err(Error::invalid("channels", "select at least one channel"));
        }
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            match self.channel_names.iter().position(|c| c == n) {
                Some(i) => idx.push(i),
                None => {
                    return Err(Error::invalid(
                        "channels",
                        format!("unknown channel `{n}`; available: {}", self.channel_names.join(", ")),
                    ))
                }
            }
        }
        let mut data = Vec::with_capacity(self.n_trials * idx.len() * self.n_samples);
        for t in 0..self.n_trials {
            for &c in &idx {
                data.extend_from_slice(self.channel(t, c));
            }
        }
        EpochSet::new(
            data,
            self.n_trials,
            idx.len(),
            self.n_samples,
            self.labels.clone(),
            self.subject_id,
            self.session_id,
            self.sample_rate_hz,
            idx.iter().map(|&i| self.channel_names[i].clone()).collect(),
            self.class_names.clone(),
        )
    }

    /// Trial counts per class.
    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes()];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

/// Concatenate sessions that share channel layout and classes.
pub fn concat(sets: &[&EpochSet]) -> Result<EpochSet> {
    let first = sets.first().ok_or_else(|| Error::invalid("sets", "nothing to concatenate"))?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for s in sets {
        if s.channel_names != first.channel_names || s.n_samples != first.n_samples {
            return Err(Error::shape(
                "sessions",
                format!("{} does not match the channel layout of {}", s.key(), first.key()),
            ));
        }
        if s.class_names != first.class_names {
            return Err(Error::invalid(
                "sessions",
                format!("{} has different classes than {}", s.key(), first.key()),
            ));
        }
        data.extend_from_slice(&s.data);
        labels.extend_from_slice(&s.labels);
    }
    let n = labels.len();
    EpochSet::new(
        data,
        n,
        first.n_channels,
        first.n_samples,
        labels,
        first.subject_id,
        first.session_id,
        first.sample_rate_hz,
        first.channel_names.clone(),
        first.class_names.clone(),
    )
}

/// The 22 EEG and 3 EOG channel labels of the four-class competition montage.
pub const MONTAGE_25: [&str; 25] = [
    "Fz", "FC3", "FC1", "FCz", "FC2", "FC4", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "CP3", "CP1", "CPz", "CP2",
    "CP4", "P1", "Pz", "P2", "POz", "EOG1", "EOG2", "EOG3",
];

/// Three EEG and three EOG channels shared by both competition montages.
pub const TRANSFER_CHANNELS: [&str; 6] = ["C3", "Cz", "C4", "EOG1", "EOG2", "EOG3"];

pub const FIVE_CHANNELS: [&str; 5] = ["Fz", "C3", "Cz", "C4", "Pz"];

pub fn is_eog(name: &str) -> bool {
    name.to_ascii_uppercase().starts_with("EOG")
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy(n_trials: usize, names: &[&str], n_samples: usize) -> EpochSet {
        let c = names.len();
        let data = (0..n_trials * c * n_samples).map(|i| (i as f32 * 0.1).sin()).collect();
        EpochSet::new(
            data,
            n_trials,
            c,
            n_samples,
            (0..n_trials).map(|i| i % 4).collect(),
            1,
            1,
            250.0,
            names.iter().map(|s| s.to_string()).collect(),
            ["left", "right", "feet", "tongue"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn select_all_in_order_is_identity() {
        let s = toy(4, &MONTAGE_25, 8);
        let all: Vec<&str> = MONTAGE_25.to_vec();
        assert_eq!(s.select_channels(&all).unwrap(), s);
    }

    #[test]
    fn select_transfer_channels() {
        let s = toy(3, &MONTAGE_25, 8);
        let t = s.select_channels(&TRANSFER_CHANNELS).unwrap();
        assert_eq!(t.n_channels(), 6);
        assert_eq!(t.channel_names(), TRANSFER_CHANNELS);
        assert_eq!(t.channel(2, 3), s.channel(2, 22));
        assert_eq!(t.labels(), s.labels());
    }

    #[test]
    fn selection_composes() {
        let s = toy(3, &MONTAGE_25, 8);
        let a = s.select_channels(&["Cz", "C3"]).unwrap().select_channels(&["C3"]).unwrap();
        let b = s.select_channels(&["C3"]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_channel_lists_available() {
        let s = toy(1, &["C3", "Cz"], 4);
        let err = s.select_channels(&["C4"]).unwrap_err().to_string();
        assert!(err.contains("C4") && err.contains("C3, Cz"), "{err}");
    }

    #[test]
    fn invariants_are_checked() {
        let names = vec!["a".to_string(), "a".to_string()];
        let classes = vec!["x".to_string(), "y".to_string()];
        let dup = EpochSet::new(vec![0.0; 4], 1, 2, 2, vec![0], 1, 1, 100.0, names, classes.clone());
        assert!(dup.is_err());
        let bad_label = EpochSet::new(vec![0.0; 2], 1, 1, 2, vec![2], 1, 1, 100.0, vec!["a".into()], classes.clone());
        assert!(bad_label.unwrap_err().to_string().contains("label 2"));
        let bad_rate = EpochSet::new(vec![0.0; 2], 1, 1, 2, vec![0], 1, 1, 0.0, vec!["a".into()], classes);
        assert!(bad_rate.is_err());
    }

    #[test]
    fn concat_and_subset() {
        let a = toy(4, &["C3", "Cz"], 5);
        let mut b = toy(2, &["C3", "Cz"], 5);
        b.session_id = 2;
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c.n_trials(), 6);
        assert_eq!(c.trial(5), b.trial(1));
        let s = c.subset(&[5, 0]).unwrap();
        assert_eq!(s.trial(0), b.trial(1));
        assert_eq!(s.labels(), &[1, 0]);
        let other = toy(1, &["C3", "C4"], 5);
        assert!(concat(&[&a, &other]).is_err());
    }
}
