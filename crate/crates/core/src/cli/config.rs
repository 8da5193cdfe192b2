use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{highpass_filter, load_epochset, Datasets, EpochSet, FilterSpec, SynthConfig};
use crate::error::{Error, Result};
use crate::hypersearch::SearchSpace;
use crate::rng::derive_seed;
use crate::strategies::{Strategy, TrainingPlan};

/// Where the epochs come from: stored epoch directories or the generator.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    /// Epoch directories, or directories whose children are epoch directories.
    #[serde(default)]
    pub paths: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    /// Ordered channel subset; all channels when absent.
    #[serde(default)]
    pub channels: Option<Vec<String>>,
    /// Zero-phase high-pass; unfiltered when absent.
    #[serde(default)]
    pub filter: Option<FilterSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub space: SearchSpace,
}

fn default_folds() -> usize {
    4
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            folds: default_folds(),
            space: SearchSpace::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default = "default_plan")]
    pub plan: TrainingPlan,
    /// Evaluate one subject only; every subject when absent.
    #[serde(default)]
    pub subject: Option<u32>,
    #[serde(default)]
    pub search: SearchConfig,
}

fn default_plan() -> TrainingPlan {
    TrainingPlan::new(Strategy::Standard)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Derive the generator and training seeds from the root seed.
    pub fn resolve_seeds(&mut self) {
        if let Some(s) = self.data.synth.as_mut() {
            s.seed = derive_seed(self.seed, "synth");
        }
        self.plan.seed = derive_seed(self.seed, "train");
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.paths, &self.data.synth) {
            (Some(_), Some(_)) => return Err(Error::Config("data: give either paths or synth, not both".into())),
            (None, None) => return Err(Error::Config("data: give paths or synth".into())),
            (Some(paths), None) => {
                if paths.is_empty() {
                    return Err(Error::Config("data.paths is empty".into()));
                }
                if let Some(p) = paths.iter().find(|p| !p.exists()) {
                    return Err(Error::Config(format!("data path {} does not exist", p.display())));
                }
            }
            (None, Some(s)) => s.validate()?,
        }
        if let Some(ch) = &self.preprocess.channels {
            if ch.is_empty() {
                return Err(Error::Config("preprocess.channels is empty".into()));
            }
        }
        self.plan.check_hyperparameters()
    }

    pub fn load_datasets(&self) -> Result<Datasets> {
        let raw = match (&self.data.paths, &self.data.synth) {
            (Some(paths), None) => load_paths(paths)?,
            (None, Some(s)) => crate::data::synth_generate(s)?,
            _ => return Err(Error::Config("data: give exactly one of paths or synth".into())),
        };
        raw.into_iter()
            .map(|(k, set)| Ok((k, self.preprocess.apply(&set)?)))
            .collect()
    }
}

impl Preprocess {
    /// Channel selection, then filtering.
    pub fn apply(&self, set: &EpochSet) -> Result<EpochSet> {
        let set = match &self.channels {
            Some(ch) => set.select_channels(ch)?,
            None => set.clone(),
        };
        match &self.filter {
            Some(f) => highpass_filter(&set, f),
            None => Ok(set),
        }
    }
}

fn is_epoch_dir(p: &Path) -> bool {
    p.join("manifest.json").is_file() && p.join("epochs.bin").is_file()
}

fn load_paths(paths: &[PathBuf]) -> Result<Datasets> {
    let mut dirs = Vec::new();
    for p in paths {
        if is_epoch_dir(p) {
            dirs.push(p.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = std::fs::read_dir(p)
            .map_err(|e| Error::io(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|c| is_epoch_dir(c))
            .collect();
        if children.is_empty() {
            return Err(Error::Config(format!("{} holds no epoch directories", p.display())));
        }
        children.sort();
        dirs.extend(children);
    }
    let mut out = Datasets::new();
    for d in dirs {
        let set = load_epochset(&d)?;
        if let Some(prev) = out.insert(set.key(), set) {
            return Err(Error::Config(format!("{} loaded twice (again from {})", prev.key(), d.display())));
        }
    }
    Ok(out)
}
