use crate::error::{ensure_len, Result};
use crate::hypernet::{
    combine, generator_backward, GeneratorParams, GeneratorShape, RepMode, TaskRepresentation,
};
use crate::neural::{Layout, NetShape, Network};

/// A differentiable per-task loss over a flat parameter vector.
#[allow(clippy::len_without_is_empty)]
pub trait Objective: Sync {
    fn len(&self) -> usize;

    /// Mean BCE over the batch and its gradient.
    fn loss_grad(&self, params: &[f64], xs: &[&[f64]], ys: &[u8]) -> Result<(f64, Vec<f64>)>;

    fn logits(&self, params: &[f64], xs: &[&[f64]]) -> Result<Vec<f64>>;
}

/// An additive regulariser. Adds its gradient into `grad` and returns its value.
pub trait Penalty: Sync {
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Adapter stack plus head, trained directly.
#[derive(Debug, Clone)]
pub struct AdapterObjective {
    layout: Layout,
}

impl AdapterObjective {
    pub fn new(shape: NetShape) -> Self {
        Self {
            layout: Layout::new(shape),
        }
    }
}

impl Objective for AdapterObjective {
    fn len(&self) -> usize {
        self.layout.len()
    }

    fn loss_grad(&self, params: &[f64], xs: &[&[f64]], ys: &[u8]) -> Result<(f64, Vec<f64>)> {
        Network::new(&self.layout, params)?.loss_and_grad(xs, ys)
    }

    fn logits(&self, params: &[f64], xs: &[&[f64]]) -> Result<Vec<f64>> {
        let net = Network::new(&self.layout, params)?;
        xs.iter().map(|x| net.logit(x)).collect()
    }
}

/// Generator parameters are trained; the adapter and head are generated from
/// a fixed task representation.
#[derive(Debug, Clone)]
pub struct HyperObjective {
    shape: GeneratorShape,
    layout: Layout,
    len: usize,
    rep: TaskRepresentation,
    mode: RepMode,
}

impl HyperObjective {
    pub fn new(shape: GeneratorShape, rep: TaskRepresentation, mode: RepMode) -> Self {
        Self {
            shape,
            layout: Layout::new(shape.target),
            len: crate::hypernet::GeneratorLayout::new(shape).len(),
            rep,
            mode,
        }
    }

    fn gen(&self, params: &[f64]) -> Result<GeneratorParams> {
        GeneratorParams::from_values(self.shape, params.to_vec())
    }
}

impl Objective for HyperObjective {
    fn len(&self) -> usize {
        self.len
    }

    fn loss_grad(&self, params: &[f64], xs: &[&[f64]], ys: &[u8]) -> Result<(f64, Vec<f64>)> {
        let gen = self.gen(params)?;
        let weights = combine(&self.rep, &gen, self.mode)?;
        let (loss, dw) =
            Network::new(&self.layout, &weights.params.values)?.loss_and_grad(xs, ys)?;
        let mut grad = vec![0.0; self.len];
        generator_backward(self.rep.long.as_slice(), &gen, &dw, &mut grad)?;
        if self.mode == RepMode::Bilevel {
            generator_backward(self.rep.short.as_slice(), &gen, &dw, &mut grad)?;
        }
        Ok((loss, grad))
    }

    fn logits(&self, params: &[f64], xs: &[&[f64]]) -> Result<Vec<f64>> {
        let weights = combine(&self.rep, &self.gen(params)?, self.mode)?;
        let net = Network::new(&self.layout, &weights.params.values)?;
        xs.iter().map(|x| net.logit(x)).collect()
    }
}

/// Shared adapters with one head per task. The flat vector is the adapter
/// stack followed by `heads` consecutive `(w, b)` heads; this objective
/// trains head `task`.
#[derive(Debug, Clone)]
pub struct MultiHeadObjective {
    layout: Layout,
    heads: usize,
    task: usize,
}

impl MultiHeadObjective {
    pub fn new(shape: NetShape, heads: usize, task: usize) -> Self {
        Self {
            layout: Layout::new(shape),
            heads,
            task,
        }
    }

    pub fn flat_len(shape: NetShape, heads: usize) -> usize {
        let l = Layout::new(shape);
        l.adapter_len() + heads * l.head_len()
    }

    fn head_range(&self) -> std::ops::Range<usize> {
        let start = self.layout.adapter_len() + self.task * self.layout.head_len();
        start..start + self.layout.head_len()
    }

    /// The single-task parameter vector seen by task `self.task`.
    pub fn gather(&self, params: &[f64]) -> Vec<f64> {
        let mut out = params[..self.layout.adapter_len()].to_vec();
        out.extend_from_slice(&params[self.head_range()]);
        out
    }
}

impl Objective for MultiHeadObjective {
    fn len(&self) -> usize {
        self.layout.adapter_len() + self.heads * self.layout.head_len()
    }

    fn loss_grad(&self, params: &[f64], xs: &[&[f64]], ys: &[u8]) -> Result<(f64, Vec<f64>)> {
        ensure_len(self.len(), params.len())?;
        let local = self.gather(params);
        let (loss, g) = Network::new(&self.layout, &local)?.loss_and_grad(xs, ys)?;
        let a = self.layout.adapter_len();
        let mut grad = vec![0.0; params.len()];
        grad[..a].copy_from_slice(&g[..a]);
        grad[self.head_range()].copy_from_slice(&g[a..]);
        Ok((loss, grad))
    }

    fn logits(&self, params: &[f64], xs: &[&[f64]]) -> Result<Vec<f64>> {
        ensure_len(self.len(), params.len())?;
        let local = self.gather(params);
        let net = Network::new(&self.layout, &local)?;
        xs.iter().map(|x| net.logit(x)).collect()
    }
}
