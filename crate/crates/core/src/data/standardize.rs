use log::warn;
use serde::{Deserialize, Serialize};

use super::EpochSet;
use crate::error::{Error, Result};

/// Lower bound applied to per-channel variances before dividing.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Pooled moments over every trial and sample of `sets`.
    pub fn fit(sets: &[&EpochSet]) -> Result<Self> {
        let first = sets.first().ok_or_else(|| Error::invalid("sets", "no data to fit statistics on"))?;
        let c = first.n_channels();
        let mut sum = vec![0.0f64; c];
        let mut count = 0usize;
        for s in sets {
            if s.n_channels() != c {
                return Err(Error::shape("channels", format!("{} vs {c}", s.n_channels())));
            }
            for t in 0..s.n_trials() {
                for (ch, acc) in sum.iter_mut().enumerate() {
                    *acc += s.channel(t, ch).iter().map(|&v| f64::from(v)).sum::<f64>();
                }
            }
            count += s.n_trials() * s.n_samples();
        }
        if count == 0 {
            return Err(Error::invalid("sets", "no samples to fit statistics on"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0f64; c];
        for s in sets {
            for t in 0..s.n_trials() {
                for (ch, acc) in sq.iter_mut().enumerate() {
                    let m = mean[ch];
                    *acc += s.channel(t, ch).iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>();
                }
            }
        }
        let std = sq
            .iter()
            .enumerate()
            .map(|(ch, s)| {
                let var = s / count as f64;
                if var < VARIANCE_FLOOR {
                    warn!("channel {ch} has variance {var:e}; flooring at {VARIANCE_FLOOR:e}");
                }
                var.max(VARIANCE_FLOOR).sqrt() as f32
            })
            .collect();
        Ok(ChannelStats {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std,
        })
    }

    pub fn apply(&self, set: &EpochSet) -> Result<EpochSet> {
        if self.mean.len() != set.n_channels() {
            return Err(Error::shape(
                "channels",
                format!("statistics cover {} channels, set has {}", self.mean.len(), set.n_channels()),
            ));
        }
        Ok(set.map_channels(|x, ch| {
            let (m, s) = (self.mean[ch], self.std[ch]);
            x.iter().map(|&v| (v - m) / s).collect()
        }))
    }
}

/// Per-channel z-scoring. Supplied statistics are applied unchanged;
/// otherwise they are fitted on `set` itself.
pub fn standardize(set: &EpochSet, stats: Option<&ChannelStats>) -> Result<(EpochSet, ChannelStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::fit(&[set])?,
    };
    Ok((stats.apply(set)?, stats))
}
