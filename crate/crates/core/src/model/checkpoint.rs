//! Checkpoint directories: `manifest.json` plus a raw `params.bin`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{block_index, init_head, ArchitectureSpec, BlockId, Eegnet, HEAD_BIAS, HEAD_WEIGHT};
use crate::blob;
use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset_id: String,
    pub strategy: String,
    pub seed: u64,
    pub epochs: usize,
    /// Head replacements and similar edits, oldest first.
    #[serde(default)]
    pub surgeries: Vec<String>,
    /// Identity of the checkpoint this one was derived from.
    #[serde(default)]
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub spec: ArchitectureSpec,
    pub params: ParamStore,
    pub block_index: BTreeMap<String, BlockId>,
    pub provenance: Provenance,
    /// Input channel order the model was trained on.
    pub channel_names: Vec<String>,
    /// Per-channel standardization fitted on the training data.
    pub normalization: Option<ChannelStats>,
    pub format_version: u32,
}

impl ModelCheckpoint {
    pub fn new(spec: ArchitectureSpec, params: ParamStore, provenance: Provenance) -> Result<Self> {
        spec.layout()?;
        let block_index = block_index(&params)?;
        Ok(ModelCheckpoint {
            spec,
            params,
            block_index,
            provenance,
            channel_names: Vec::new(),
            normalization: None,
            format_version: CHECKPOINT_FORMAT_VERSION,
        })
    }

    pub fn model(&self) -> Result<Eegnet> {
        Eegnet::new(self.spec.clone())
    }

    /// Parameters of the given blocks, for bit-level comparison.
    pub fn block_tensors(&self, blocks: &[BlockId]) -> Vec<(&str, &Tensor)> {
        self.params
            .iter()
            .filter(|(n, _)| self.block_index.get(*n).is_some_and(|b| blocks.contains(b)))
            .collect()
    }

    /// Swap the classification head for a freshly initialized one mapping to
    /// `new_n_classes`. Everything below the head is copied bit for bit. The
    /// head is re-initialized even when the class count is unchanged.
    pub fn replace_head<R: Rng + ?Sized>(&self, new_n_classes: usize, rng: &mut R) -> Result<ModelCheckpoint> {
        if new_n_classes < 2 {
            return Err(Error::invalid("new_n_classes", format!("need at least 2, got {new_n_classes}")));
        }
        let mut out = self.clone();
        out.spec.n_classes = new_n_classes;
        out.params.remove(HEAD_WEIGHT);
        out.params.remove(HEAD_BIAS);
        init_head(&mut out.params, &out.spec, rng)?;
        out.params.set_frozen(Vec::<String>::new())?;
        out.params.reset_optimizer();
        out.block_index = block_index(&out.params)?;
        out.provenance.surgeries.push(format!(
            "replace_head: {} -> {} classes",
            self.spec.n_classes, new_n_classes
        ));
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_length: usize,
    block: BlockId,
    #[serde(default)]
    buffer: bool,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: ArchitectureSpec,
    provenance: Provenance,
    #[serde(default)]
    channel_names: Vec<String>,
    #[serde(default)]
    normalization: Option<ChannelStats>,
    #[serde(default)]
    frozen: Vec<String>,
    tensors: Vec<TensorEntry>,
    blob_bytes: usize,
    crc32: u32,
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, dir: &Path) -> Result<()> {
    blob::create_dir(dir)?;
    let mut bytes = Vec::new();
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, t) in ckpt.params.iter() {
        let block = *ckpt
            .block_index
            .get(name)
            .ok_or_else(|| Error::invalid("block index", format!("no block recorded for `{name}`")))?;
        let enc = blob::encode_f32(t.data());
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            byte_offset: bytes.len(),
            byte_length: enc.len(),
            block,
            buffer: ckpt.params.is_buffer(name),
        });
        bytes.extend_from_slice(&enc);
    }
    let manifest = Manifest {
        format_version: ckpt.format_version,
        spec: ckpt.spec.clone(),
        provenance: ckpt.provenance.clone(),
        channel_names: ckpt.channel_names.clone(),
        normalization: ckpt.normalization.clone(),
        frozen: ckpt.params.frozen().iter().cloned().collect(),
        tensors,
        blob_bytes: bytes.len(),
        crc32: blob::crc32(&bytes),
    };
    blob::write_bytes(&dir.join(BLOB), &bytes)?;
    blob::write_json(&dir.join(MANIFEST), &manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let mpath = dir.join(MANIFEST);
    let version = blob::manifest_version(&mpath)?;
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Version {
            path: mpath,
            found: version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    let manifest: Manifest = blob::read_json(&mpath)?;
    let bpath = dir.join(BLOB);
    let bytes = blob::read_bytes(&bpath)?;
    if bytes.len() != manifest.blob_bytes {
        return Err(Error::format(
            &bpath,
            format!("blob holds {} bytes, manifest declares {}", bytes.len(), manifest.blob_bytes),
        ));
    }
    let declared: usize = manifest.tensors.iter().map(|t| t.byte_length).sum();
    if declared != bytes.len() {
        return Err(Error::format(
            &mpath,
            format!("tensor table covers {declared} bytes, blob holds {}", bytes.len()),
        ));
    }
    let actual = blob::crc32(&bytes);
    if actual != manifest.crc32 {
        return Err(Error::Checksum {
            path: bpath,
            expected: manifest.crc32,
            actual,
        });
    }
    let mut params = ParamStore::new();
    let mut index = BTreeMap::new();
    let mut cursor = 0;
    for e in &manifest.tensors {
        let numel: usize = e.shape.iter().product();
        if e.byte_offset != cursor || e.byte_length != numel * 4 {
            return Err(Error::format(
                &mpath,
                format!(
                    "tensor `{}` at offset {} with {} bytes does not match shape {:?}",
                    e.name, e.byte_offset, e.byte_length, e.shape
                ),
            ));
        }
        let data = blob::decode_f32(&bytes[cursor..cursor + e.byte_length]);
        cursor += e.byte_length;
        let t = Tensor::new(e.shape.clone(), data)?;
        if e.buffer {
            params.insert_buffer(e.name.clone(), t);
        } else {
            params.insert(e.name.clone(), t);
        }
        index.insert(e.name.clone(), e.block);
    }
    params.set_frozen(manifest.frozen)?;
    manifest.spec.layout()?;
    Ok(ModelCheckpoint {
        spec: manifest.spec,
        params,
        block_index: index,
        provenance: manifest.provenance,
        channel_names: manifest.channel_names,
        normalization: manifest.normalization,
        format_version: version,
    })
}
