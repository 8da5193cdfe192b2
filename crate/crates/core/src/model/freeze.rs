use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BlockId;
use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// How many of the lower blocks are frozen during retraining.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FreezeDepth {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "block1")]
    Block1,
    #[serde(rename = "block1+2")]
    Block1And2,
}

impl FreezeDepth {
    pub fn blocks(self) -> &'static [BlockId] {
        match self {
            FreezeDepth::None => &[],
            FreezeDepth::Block1 => &[BlockId::Block1],
            FreezeDepth::Block1And2 => &[BlockId::Block1, BlockId::Block2],
        }
    }
}

impl fmt::Display for FreezeDepth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FreezeDepth::None => "none",
            FreezeDepth::Block1 => "block1",
            FreezeDepth::Block1And2 => "block1+2",
        })
    }
}

impl FromStr for FreezeDepth {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FreezeDepth::None),
            "block1" => Ok(FreezeDepth::Block1),
            "block1+2" => Ok(FreezeDepth::Block1And2),
            other => Err(Error::invalid(
                "freeze depth",
                format!("`{other}` is not one of none, block1, block1+2"),
            )),
        }
    }
}

/// Freeze every entry (weights, batch-norm affine parameters and running
/// statistics) of the selected blocks. Any previous frozen set is replaced.
pub fn apply_freeze(params: &mut ParamStore, depth: FreezeDepth, block_index: &BTreeMap<String, BlockId>) -> Result<()> {
    if let Some(name) = params.names().find(|n| !block_index.contains_key(*n)) {
        return Err(Error::invalid("block index", format!("no block recorded for `{name}`")));
    }
    let selected = depth.blocks();
    let names: Vec<String> = params
        .names()
        .filter(|n| selected.contains(&block_index[*n]))
        .map(str::to_string)
        .collect();
    params.set_frozen(names)
}
