use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of the adapter stack and head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct NetShape {
    /// Embedding width `d`.
    pub dim: usize,
    /// Adapter bottleneck width.
    pub hidden: usize,
    /// Number of stacked adapters.
    pub depth: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            dim: 512,
            hidden: 256,
            depth: 1,
        }
    }
}

impl NetShape {
    pub fn new(dim: usize, hidden: usize, depth: usize) -> Self {
        Self { dim, hidden, depth }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "network dim and hidden must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterOffsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub shape: NetShape,
    blocks: Vec<Block>,
    adapters: Vec<AdapterOffsets>,
    head_w: usize,
    head_b: usize,
    len: usize,
}

impl Layout {
    pub fn new(shape: NetShape) -> Self {
        let NetShape { dim, hidden, depth } = shape;
        let mut blocks = Vec::new();
        let mut adapters = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, blocks: &mut Vec<Block>| {
            let start = offset;
            blocks.push(Block {
                name,
                rows,
                cols,
                offset: start,
            });
            offset += rows * cols;
            start
        };
        for layer in 0..depth {
            let prefix = if depth == 1 {
                "adapter".to_string()
            } else {
                format!("adapter.{layer}")
            };
            let w1 = push(format!("{prefix}.W1"), hidden, dim, &mut blocks);
            let b1 = push(format!("{prefix}.b1"), hidden, 1, &mut blocks);
            let w2 = push(format!("{prefix}.W2"), dim, hidden, &mut blocks);
            let b2 = push(format!("{prefix}.b2"), dim, 1, &mut blocks);
            adapters.push(AdapterOffsets { w1, b1, w2, b2 });
        }
        let head_w = push("head.w".into(), dim, 1, &mut blocks);
        let head_b = push("head.b".into(), 1, 1, &mut blocks);
        Self {
            shape,
            blocks,
            adapters,
            head_w,
            head_b,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn adapters(&self) -> &[AdapterOffsets] {
        &self.adapters
    }

    pub fn head_w(&self) -> usize {
        self.head_w
    }

    pub fn head_b(&self) -> usize {
        self.head_b
    }

    /// Number of leading entries that belong to the adapter stack.
    pub fn adapter_len(&self) -> usize {
        self.head_w
    }

    pub fn head_len(&self) -> usize {
        self.shape.dim + 1
    }
}

/// Flat trainable parameters of one adapter stack plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub shape: NetShape,
    pub values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(shape: NetShape) -> Self {
        let len = Layout::new(shape).len();
        Self {
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(shape: NetShape, values: Vec<f64>) -> Result<Self> {
        let len = Layout::new(shape).len();
        if values.len() != len {
            return Err(Error::dims(len, values.len()));
        }
        Ok(Self { shape, values })
    }

    /// Identity-behaving initialisation: `W1` uniform in `±1/sqrt(d)`, every
    /// other block zero.
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Self {
        let layout = Layout::new(shape);
        let mut values = vec![0.0; layout.len()];
        let bound = 1.0 / (shape.dim as f64).sqrt();
        for a in layout.adapters() {
            let n = shape.hidden * shape.dim;
            for v in &mut values[a.w1..a.w1 + n] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Self { shape, values }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.shape)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flatten(&self) -> &[f64] {
        &self.values
    }

    /// Named blocks in layout order.
    pub fn to_blocks(&self) -> BTreeMap<String, Vec<f64>> {
        self.layout()
            .blocks()
            .iter()
            .map(|b| (b.name.clone(), self.values[b.range()].to_vec()))
            .collect()
    }

    pub fn from_blocks(shape: NetShape, blocks: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let layout = Layout::new(shape);
        let mut values = vec![0.0; layout.len()];
        for b in layout.blocks() {
            let data = blocks.get(&b.name).ok_or_else(|| {
                Error::IncompatibleSnapshot(format!("missing block `{}`", b.name))
            })?;
            if data.len() != b.len() {
                return Err(Error::dims(b.len(), data.len()));
            }
            values[b.range()].copy_from_slice(data);
        }
        if blocks.len() != layout.blocks().len() {
            return Err(Error::IncompatibleSnapshot(format!(
                "expected {} blocks, found {}",
                layout.blocks().len(),
                blocks.len()
            )));
        }
        Ok(Self { shape, values })
    }
}
