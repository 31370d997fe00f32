use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

use super::layout::{NetShape, ParamVector};

pub const LAYOUT_VERSION: u32 = 1;

/// Weights of one per-block generator MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorBlockSnapshot {
    #[serde(rename = "W1")]
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    #[serde(rename = "W2")]
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypernetSection {
    pub d_z: usize,
    pub hidden: usize,
    pub blocks: BTreeMap<String, GeneratorBlockSnapshot>,
}

/// On-disk parameter checkpoint. Floats are written in shortest round-trip
/// form, so a save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layout_version: u32,
    pub d: usize,
    pub hidden: usize,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub blocks: BTreeMap<String, Vec<f64>>,
    /// Extra task-specific heads (`w` followed by `b`), keyed by task id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub heads: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypernet: Option<HypernetSection>,
}

impl Checkpoint {
    pub fn empty(shape: NetShape) -> Self {
        Self {
            layout_version: LAYOUT_VERSION,
            d: shape.dim,
            hidden: shape.hidden,
            depth: shape.depth,
            blocks: BTreeMap::new(),
            heads: BTreeMap::new(),
            hypernet: None,
        }
    }

    pub fn from_params(params: &ParamVector) -> Self {
        Self {
            blocks: params.to_blocks(),
            ..Self::empty(params.shape)
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape::new(self.d, self.hidden, self.depth)
    }

    pub fn params(&self) -> Result<ParamVector> {
        self.check_version()?;
        ParamVector::from_blocks(self.shape(), &self.blocks)
    }

    pub fn check_version(&self) -> Result<()> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::IncompatibleSnapshot(format!(
                "layout version {} (expected {LAYOUT_VERSION})",
                self.layout_version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = read_json(path)?;
        ckpt.check_version()?;
        Ok(ckpt)
    }
}
