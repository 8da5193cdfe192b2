//! Epoch directories: `manifest.json` plus a raw `epochs.bin`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EpochSet;
use crate::blob;
use crate::error::{Error, Result};

pub const EPOCH_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "epochs.bin";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    subject_id: u32,
    session_id: u32,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    sample_rate_hz: f64,
    channel_names: Vec<String>,
    class_names: Vec<String>,
    labels: Vec<usize>,
    crc32: u32,
}

pub fn save_epochset(set: &EpochSet, dir: &Path) -> Result<()> {
    blob::create_dir(dir)?;
    let bytes = blob::encode_f32(set.data());
    let manifest = Manifest {
        format_version: EPOCH_FORMAT_VERSION,
        subject_id: set.subject_id,
        session_id: set.session_id,
        n_trials: set.n_trials(),
        n_channels: set.n_channels(),
        n_samples: set.n_samples(),
        sample_rate_hz: set.sample_rate_hz,
        channel_names: set.channel_names().to_vec(),
        class_names: set.class_names().to_vec(),
        labels: set.labels().to_vec(),
        crc32: blob::crc32(&bytes),
    };
    blob::write_bytes(&dir.join(BLOB), &bytes)?;
    blob::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_epochset(dir: &Path) -> Result<EpochSet> {
    let mpath = dir.join(MANIFEST);
    let version = blob::manifest_version(&mpath)?;
    if version != EPOCH_FORMAT_VERSION {
        return Err(Error::Version {
            path: mpath,
            found: version,
            expected: EPOCH_FORMAT_VERSION,
        });
    }
    let m: Manifest = blob::read_json(&mpath)?;
    let bpath = dir.join(BLOB);
    let bytes = blob::read_bytes(&bpath)?;
    let per_trial = m.n_channels * m.n_samples * 4;
    let expect = m.n_trials * per_trial;
    if bytes.len() != expect {
        let held = if per_trial > 0 { bytes.len() / per_trial } else { 0 };
        return Err(Error::format(
            &bpath,
            format!(
                "n_trials: manifest declares {} trials ({expect} bytes), blob holds {} bytes (~{held} trials)",
                m.n_trials,
                bytes.len()
            ),
        ));
    }
    let actual = blob::crc32(&bytes);
    if actual != m.crc32 {
        return Err(Error::Checksum {
            path: bpath,
            expected: m.crc32,
            actual,
        });
    }
    EpochSet::new(
        blob::decode_f32(&bytes),
        m.n_trials,
        m.n_channels,
        m.n_samples,
        m.labels,
        m.subject_id,
        m.session_id,
        m.sample_rate_hz,
        m.channel_names,
        m.class_names,
    )
}
