use crate::error::{ensure_len, Result};

use super::layout::Layout;
use super::loss::bce_loss;

/// A borrowed view of an adapter stack plus head over a flat parameter slice.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    layout: &'a Layout,
    params: &'a [f64],
}

/// Per-layer activations kept for the backward pass.
struct Trace {
    /// Input of every adapter layer, then the final representation.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of every adapter bottleneck.
    pre: Vec<Vec<f64>>,
}

fn matvec_add(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o = b[i] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

impl<'a> Network<'a> {
    pub fn new(layout: &'a Layout, params: &'a [f64]) -> Result<Self> {
        ensure_len(layout.len(), params.len())?;
        Ok(Self { layout, params })
    }

    fn layer_forward(&self, layer: usize, x: &[f64], pre: &mut [f64]) -> Vec<f64> {
        let NetShapeDims { dim, hidden } = self.dims();
        let a = self.layout.adapters()[layer];
        let p = self.params;
        matvec_add(
            &p[a.w1..a.w1 + hidden * dim],
            x,
            &p[a.b1..a.b1 + hidden],
            pre,
        );
        let relu: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();
        let mut branch = vec![0.0; dim];
        matvec_add(
            &p[a.w2..a.w2 + dim * hidden],
            &relu,
            &p[a.b2..a.b2 + dim],
            &mut branch,
        );
        x.iter().zip(&branch).map(|(xi, bi)| xi + bi).collect()
    }

    fn dims(&self) -> NetShapeDims {
        NetShapeDims {
            dim: self.layout.shape.dim,
            hidden: self.layout.shape.hidden,
        }
    }

    /// Output of the full adapter stack: `h + W2·ReLU(W1·h + b1) + b2` per layer.
    pub fn adapt(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure_len(self.layout.shape.dim, x.len())?;
        let mut h = x.to_vec();
        let mut pre = vec![0.0; self.layout.shape.hidden];
        for layer in 0..self.layout.adapters().len() {
            h = self.layer_forward(layer, &h, &mut pre);
        }
        Ok(h)
    }

    pub fn head(&self, h: &[f64]) -> Result<f64> {
        ensure_len(self.layout.shape.dim, h.len())?;
        let w = &self.params[self.layout.head_w()..self.layout.head_w() + h.len()];
        let b = self.params[self.layout.head_b()];
        Ok(b + w.iter().zip(h).map(|(a, c)| a * c).sum::<f64>())
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        let h = self.adapt(x)?;
        self.head(&h)
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let depth = self.layout.adapters().len();
        let mut inputs = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        inputs.push(x.to_vec());
        for layer in 0..depth {
            let mut a = vec![0.0; self.layout.shape.hidden];
            let next = self.layer_forward(layer, &inputs[layer], &mut a);
            pre.push(a);
            inputs.push(next);
        }
        Trace { inputs, pre }
    }

    /// Adds `scale · d(BCE)/dθ` for one example into `grad`; returns the loss.
    fn accumulate(&self, x: &[f64], label: u8, scale: f64, grad: &mut [f64]) -> f64 {
        let NetShapeDims { dim, hidden } = self.dims();
        let p = self.params;
        let trace = self.trace(x);
        let h_out = trace.inputs.last().expect("trace has final output");
        let logit = self.head(h_out).expect("dims checked");
        let (loss, dlogit) = bce_loss(logit, label);
        let g = dlogit * scale;

        let hw = self.layout.head_w();
        for (gi, hi) in grad[hw..hw + dim].iter_mut().zip(h_out) {
            *gi += g * hi;
        }
        grad[self.layout.head_b()] += g;

        let mut dh: Vec<f64> = p[hw..hw + dim].iter().map(|w| w * g).collect();
        for layer in (0..self.layout.adapters().len()).rev() {
            let a = self.layout.adapters()[layer];
            let h_in = &trace.inputs[layer];
            let pre = &trace.pre[layer];
            // Residual branch: out = h_in + W2·r + b2.
            for (k, &d) in dh.iter().enumerate() {
                grad[a.b2 + k] += d;
            }
            let mut dpre = vec![0.0; hidden];
            for (k, &d) in dh.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = a.w2 + k * hidden;
                for j in 0..hidden {
                    let r = pre[j].max(0.0);
                    grad[row + j] += d * r;
                    dpre[j] += p[row + j] * d;
                }
            }
            for (j, dp) in dpre.iter_mut().enumerate() {
                if pre[j] <= 0.0 {
                    *dp = 0.0;
                }
            }
            let mut dh_in = dh.clone();
            for (j, &dp) in dpre.iter().enumerate() {
                if dp == 0.0 {
                    continue;
                }
                grad[a.b1 + j] += dp;
                let row = a.w1 + j * dim;
                for k in 0..dim {
                    grad[row + k] += dp * h_in[k];
                    dh_in[k] += p[row + k] * dp;
                }
            }
            dh = dh_in;
        }
        loss
    }

    /// Mean BCE over the batch and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, xs: &[&[f64]], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
        ensure_len(xs.len(), labels.len())?;
        let mut grad = vec![0.0; self.layout.len()];
        if xs.is_empty() {
            return Ok((0.0, grad));
        }
        for x in xs {
            ensure_len(self.layout.shape.dim, x.len())?;
        }
        let scale = 1.0 / xs.len() as f64;
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            total += self.accumulate(x, y, scale, &mut grad);
        }
        Ok((total * scale, grad))
    }

    pub fn mean_loss(&self, xs: &[&[f64]], labels: &[u8]) -> Result<f64> {
        ensure_len(xs.len(), labels.len())?;
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(labels) {
            total += bce_loss(self.logit(x)?, y).0;
        }
        Ok(total / xs.len().max(1) as f64)
    }
}

struct NetShapeDims {
    dim: usize,
    hidden: usize,
}

pub fn adapter_forward(layout: &Layout, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    Network::new(layout, params)?.adapt(x)
}

pub fn head_forward(layout: &Layout, params: &[f64], h: &[f64]) -> Result<f64> {
    Network::new(layout, params)?.head(h)
}

pub fn forward_logit(layout: &Layout, params: &[f64], x: &[f64]) -> Result<f64> {
    Network::new(layout, params)?.logit(x)
}

/// Mean-BCE gradient over a batch of `(x, label)` pairs.
pub fn backward(
    layout: &Layout,
    params: &[f64],
    xs: &[&[f64]],
    labels: &[u8],
) -> Result<(f64, Vec<f64>)> {
    Network::new(layout, params)?.loss_and_grad(xs, labels)
}
