use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{subjects, Datasets, SessionKey};
use crate::error::{Error, Result};
use crate::strategies::Strategy;

/// Which sessions train, retrain and test a model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: Vec<SessionKey>,
    #[serde(default)]
    pub retrain: Option<Vec<SessionKey>>,
    pub test: Vec<SessionKey>,
}

impl SplitAssignment {
    pub fn fit_keys(&self) -> BTreeSet<SessionKey> {
        self.train.iter().chain(self.retrain.iter().flatten()).copied().collect()
    }

    /// Test sessions must never be used for fitting.
    pub fn check_leakage(&self) -> Result<()> {
        let fit = self.fit_keys();
        if let Some(k) = self.test.iter().find(|k| fit.contains(k)) {
            return Err(Error::invalid("split", format!("test session {k} also used for training")));
        }
        Ok(())
    }
}

fn require(datasets: &Datasets, key: SessionKey) -> Result<SessionKey> {
    if datasets.contains_key(&key) {
        Ok(key)
    } else {
        Err(Error::Missing(format!("session {key}")))
    }
}

/// Route sessions for `strategy`. `subject` is the evaluated subject for
/// standard routing and the holdout for split routing; distributed ignores it.
pub fn make_split(datasets: &Datasets, strategy: Strategy, subject: Option<u32>) -> Result<SplitAssignment> {
    let needs_subject = || subject.ok_or_else(|| Error::invalid("subject", format!("{strategy} needs a subject")));
    let split = match strategy {
        Strategy::Standard | Strategy::TransferStandard => {
            let u = needs_subject()?;
            SplitAssignment {
                train: vec![require(datasets, SessionKey::new(u, 1))?],
                retrain: None,
                test: vec![require(datasets, SessionKey::new(u, 2))?],
            }
        }
        Strategy::Distributed => {
            let subs = subjects(datasets);
            if subs.is_empty() {
                return Err(Error::Missing("any subject".into()));
            }
            let mut train = Vec::new();
            let mut test = Vec::new();
            for u in subs {
                train.push(require(datasets, SessionKey::new(u, 1))?);
                test.push(require(datasets, SessionKey::new(u, 2))?);
            }
            SplitAssignment {
                train,
                retrain: None,
                test,
            }
        }
        Strategy::Split | Strategy::Frozen | Strategy::TransferSplit => {
            let h = needs_subject()?;
            let retrain = require(datasets, SessionKey::new(h, 1))?;
            let test = require(datasets, SessionKey::new(h, 2))?;
            let train: Vec<SessionKey> = datasets.keys().filter(|k| k.subject != h).copied().collect();
            if train.is_empty() {
                return Err(Error::Missing(format!("subjects other than holdout {h}")));
            }
            SplitAssignment {
                train,
                retrain: Some(vec![retrain]),
                test: vec![test],
            }
        }
    };
    split.check_leakage()?;
    Ok(split)
}
