//! Bi-level task representations and the hypernetwork that generates adapter and
//! head weights from them.
//!
//! Every block of the target [`Layout`] has its own two-layer generator
//! `out = W2·ReLU(W1·z + b1) + b2`, reshaped row-major into the block.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed, mean_embedding, Embedding, EncoderConfig};
use crate::error::{ensure_len, Error, Result};
use crate::neural::{
    Checkpoint, GeneratorBlockSnapshot, HypernetSection, Layout, NetShape, Network, ParamVector,
};
use crate::util::rng;

/// Number of texts averaged into the short representation.
pub const SHORT_REP_TEXTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorShape {
    pub target: NetShape,
    pub d_z: usize,
    pub hidden: usize,
}

impl Default for GeneratorShape {
    fn default() -> Self {
        Self {
            target: NetShape::default(),
            d_z: 512,
            hidden: 32,
        }
    }
}

#[derive(Debug, Clone)]
struct GenBlock {
    name: String,
    /// Offset of the generated block inside the target parameter vector.
    target_offset: usize,
    out: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratorLayout {
    pub shape: GeneratorShape,
    target: Layout,
    blocks: Vec<GenBlock>,
    len: usize,
}

impl GeneratorLayout {
    pub fn new(shape: GeneratorShape) -> Self {
        let target = Layout::new(shape.target);
        let (dz, g) = (shape.d_z, shape.hidden);
        let mut offset = 0;
        let blocks = target
            .blocks()
            .iter()
            .map(|b| {
                let out = b.len();
                let w1 = offset;
                let b1 = w1 + g * dz;
                let w2 = b1 + g;
                let b2 = w2 + out * g;
                offset = b2 + out;
                GenBlock {
                    name: b.name.clone(),
                    target_offset: b.offset,
                    out,
                    w1,
                    b1,
                    w2,
                    b2,
                }
            })
            .collect();
        Self {
            shape,
            target,
            blocks,
            len: offset,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn target(&self) -> &Layout {
        &self.target
    }
}

/// Flat parameters of all per-block generators.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub shape: GeneratorShape,
    pub values: Vec<f64>,
}

impl GeneratorParams {
    pub fn zeros(shape: GeneratorShape) -> Self {
        Self {
            shape,
            values: vec![0.0; GeneratorLayout::new(shape).len()],
        }
    }

    /// First layers uniform in `±1/sqrt(d_z)`, output layers zero. The output
    /// bias of the adapter `W1` generators carries the usual adapter
    /// initialisation so the generated adapters start identity-behaving but
    /// trainable.
    pub fn init<R: Rng>(shape: GeneratorShape, rng: &mut R) -> Self {
        let layout = GeneratorLayout::new(shape);
        let mut values = vec![0.0; layout.len()];
        let bound = 1.0 / (shape.d_z as f64).sqrt();
        let adapter_bound = 1.0 / (shape.target.dim as f64).sqrt();
        for b in &layout.blocks {
            for v in &mut values[b.w1..b.b1] {
                *v = rng.gen_range(-bound..bound);
            }
            if b.name.ends_with(".W1") {
                for v in &mut values[b.b2..b.b2 + b.out] {
                    *v = rng.gen_range(-adapter_bound..adapter_bound);
                }
            }
        }
        Self { shape, values }
    }

    pub fn from_values(shape: GeneratorShape, values: Vec<f64>) -> Result<Self> {
        ensure_len(GeneratorLayout::new(shape).len(), values.len())?;
        Ok(Self { shape, values })
    }

    pub fn layout(&self) -> GeneratorLayout {
        GeneratorLayout::new(self.shape)
    }

    pub fn to_section(&self) -> HypernetSection {
        let layout = self.layout();
        let blocks = layout
            .blocks
            .iter()
            .map(|b| {
                (
                    b.name.clone(),
                    GeneratorBlockSnapshot {
                        w1: self.values[b.w1..b.b1].to_vec(),
                        b1: self.values[b.b1..b.w2].to_vec(),
                        w2: self.values[b.w2..b.b2].to_vec(),
                        b2: self.values[b.b2..b.b2 + b.out].to_vec(),
                    },
                )
            })
            .collect::<BTreeMap<_, _>>();
        HypernetSection {
            d_z: self.shape.d_z,
            hidden: self.shape.hidden,
            blocks,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            hypernet: Some(self.to_section()),
            ..Checkpoint::empty(self.shape.target)
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_version()?;
        let section = ckpt.hypernet.as_ref().ok_or_else(|| {
            Error::IncompatibleSnapshot("checkpoint has no hypernet section".into())
        })?;
        let shape = GeneratorShape {
            target: ckpt.shape(),
            d_z: section.d_z,
            hidden: section.hidden,
        };
        let layout = GeneratorLayout::new(shape);
        let mut values = vec![0.0; layout.len()];
        for b in &layout.blocks {
            let snap = section.blocks.get(&b.name).ok_or_else(|| {
                Error::IncompatibleSnapshot(format!("missing generator block `{}`", b.name))
            })?;
            for (range, src) in [
                (b.w1..b.b1, &snap.w1),
                (b.b1..b.w2, &snap.b1),
                (b.w2..b.b2, &snap.w2),
                (b.b2..b.b2 + b.out, &snap.b2),
            ] {
                ensure_len(range.len(), src.len())?;
                values[range].copy_from_slice(src);
            }
        }
        Ok(Self { shape, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepMode {
    Bilevel,
    LongOnly,
}

/// Long (all training texts) and short (64 sampled texts) task embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRepresentation {
    pub task_id: String,
    pub long: Embedding,
    pub short: Embedding,
}

/// Weights produced by the generator for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedWeights {
    pub params: ParamVector,
    pub task_id: String,
    pub mode: RepMode,
}

/// Builds the representation from already-embedded training texts.
pub fn task_rep_from_embeddings(
    task_id: &str,
    embeddings: &[&[f64]],
    normalize: bool,
    seed: u64,
) -> Result<TaskRepresentation> {
    let Some(first) = embeddings.first() else {
        return Err(Error::EmptyTask(task_id.to_string()));
    };
    let dim = first.len();
    let long = mean_embedding(embeddings.iter().copied(), dim, normalize)?;
    let short = if embeddings.len() <= SHORT_REP_TEXTS {
        long.clone()
    } else {
        let mut r = rng(seed, &format!("short-rep/{task_id}"));
        let mut picked = sample(&mut r, embeddings.len(), SHORT_REP_TEXTS).into_vec();
        picked.sort_unstable();
        mean_embedding(picked.iter().map(|&i| embeddings[i]), dim, normalize)?
    };
    Ok(TaskRepresentation {
        task_id: task_id.to_string(),
        long,
        short,
    })
}

pub fn compute_task_rep<S: AsRef<str>>(
    task_id: &str,
    train_texts: &[S],
    config: &EncoderConfig,
    seed: u64,
) -> Result<TaskRepresentation> {
    let embedded: Vec<Embedding> = train_texts
        .iter()
        .map(|t| embed(t.as_ref(), config))
        .collect();
    let views: Vec<&[f64]> = embedded.iter().map(|e| e.as_slice()).collect();
    task_rep_from_embeddings(task_id, &views, config.normalize, seed)
}

fn block_hidden(gen: &[f64], b: &GenBlock, z: &[f64], g: usize) -> Vec<f64> {
    let dz = z.len();
    (0..g)
        .map(|j| {
            let row = &gen[b.w1 + j * dz..b.w1 + (j + 1) * dz];
            gen[b.b1 + j] + row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

fn generate_into(layout: &GeneratorLayout, gen: &[f64], z: &[f64], out: &mut [f64], add: bool) {
    let g = layout.shape.hidden;
    for b in &layout.blocks {
        let r: Vec<f64> = block_hidden(gen, b, z, g)
            .into_iter()
            .map(|a| a.max(0.0))
            .collect();
        for i in 0..b.out {
            let row = &gen[b.w2 + i * g..b.w2 + (i + 1) * g];
            let v = gen[b.b2 + i] + row.iter().zip(&r).map(|(w, h)| w * h).sum::<f64>();
            let slot = &mut out[b.target_offset + i];
            if add {
                *slot += v;
            } else {
                *slot = v;
            }
        }
    }
}

/// `block = W2·ReLU(W1·z + b1) + b2` for every block of the target layout.
pub fn generate(z: &[f64], gen: &GeneratorParams) -> Result<ParamVector> {
    ensure_len(gen.shape.d_z, z.len())?;
    let layout = gen.layout();
    ensure_len(layout.len(), gen.values.len())?;
    let mut out = vec![0.0; layout.target().len()];
    generate_into(&layout, &gen.values, z, &mut out, false);
    ParamVector::from_values(gen.shape.target, out)
}

pub fn combine(
    rep: &TaskRepresentation,
    gen: &GeneratorParams,
    mode: RepMode,
) -> Result<GeneratedWeights> {
    let mut params = generate(rep.long.as_slice(), gen)?;
    if mode == RepMode::Bilevel {
        let short = generate(rep.short.as_slice(), gen)?;
        params
            .values
            .iter_mut()
            .zip(&short.values)
            .for_each(|(a, b)| *a += b);
    }
    Ok(GeneratedWeights {
        params,
        task_id: rep.task_id.clone(),
        mode,
    })
}

/// Adds `J(z)ᵀ · d_weights` into `grad`, where `J` is the Jacobian of
/// [`generate`] with respect to the generator parameters.
pub fn generator_backward(
    z: &[f64],
    gen: &GeneratorParams,
    d_weights: &[f64],
    grad: &mut [f64],
) -> Result<()> {
    let layout = gen.layout();
    ensure_len(gen.shape.d_z, z.len())?;
    ensure_len(layout.target().len(), d_weights.len())?;
    ensure_len(layout.len(), grad.len())?;
    let g = gen.shape.hidden;
    let dz = z.len();
    let p = &gen.values;
    for b in &layout.blocks {
        let dout = &d_weights[b.target_offset..b.target_offset + b.out];
        if dout.iter().all(|&d| d == 0.0) {
            continue;
        }
        let pre = block_hidden(p, b, z, g);
        let mut dr = vec![0.0; g];
        for (i, &d) in dout.iter().enumerate() {
            grad[b.b2 + i] += d;
            if d == 0.0 {
                continue;
            }
            let row = b.w2 + i * g;
            for j in 0..g {
                grad[row + j] += d * pre[j].max(0.0);
                dr[j] += p[row + j] * d;
            }
        }
        for j in 0..g {
            if pre[j] <= 0.0 || dr[j] == 0.0 {
                continue;
            }
            grad[b.b1 + j] += dr[j];
            let row = b.w1 + j * dz;
            for k in 0..dz {
                grad[row + k] += dr[j] * z[k];
            }
        }
    }
    Ok(())
}

/// Mean BCE of the generated model on a batch, and its gradient with respect
/// to the generator parameters.
pub fn hypernet_backward(
    xs: &[&[f64]],
    labels: &[u8],
    rep: &TaskRepresentation,
    gen: &GeneratorParams,
    mode: RepMode,
) -> Result<(f64, Vec<f64>)> {
    let weights = combine(rep, gen, mode)?;
    let layout = Layout::new(gen.shape.target);
    let (loss, dw) = Network::new(&layout, &weights.params.values)?.loss_and_grad(xs, labels)?;
    let mut grad = vec![0.0; gen.values.len()];
    generator_backward(rep.long.as_slice(), gen, &dw, &mut grad)?;
    if mode == RepMode::Bilevel {
        generator_backward(rep.short.as_slice(), gen, &dw, &mut grad)?;
    }
    Ok((loss, grad))
}
