use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, Penalty};
use super::Examples;
use crate::error::{ensure_len, Result};
use crate::util::rng;

/// Parameter snapshot and diagonal Fisher estimate taken after a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwcAnchor {
    pub task_id: String,
    pub theta_star: Vec<f64>,
    pub fisher: Vec<f64>,
    pub sample_cap: usize,
}

/// Mean squared per-example gradient over at most `sample_cap` training
/// examples (a seeded subset when the split is larger).
pub fn ewc_estimate(
    task_id: &str,
    objective: &dyn Objective,
    params: &[f64],
    train: &Examples,
    sample_cap: usize,
    seed: u64,
) -> Result<EwcAnchor> {
    ensure_len(objective.len(), params.len())?;
    let n = train.len();
    let picked: Vec<usize> = if n <= sample_cap {
        (0..n).collect()
    } else {
        let mut r = rng(seed, &format!("fisher/{task_id}"));
        let mut p = sample(&mut r, n, sample_cap).into_vec();
        p.sort_unstable();
        p
    };
    let mut fisher = vec![0.0; params.len()];
    for &i in &picked {
        let (_, g) = objective.loss_grad(params, &[train.xs[i].as_slice()], &[train.ys[i]])?;
        for (f, gi) in fisher.iter_mut().zip(&g) {
            *f += gi * gi;
        }
    }
    let scale = 1.0 / picked.len().max(1) as f64;
    fisher.iter_mut().for_each(|f| *f *= scale);
    Ok(EwcAnchor {
        task_id: task_id.to_string(),
        theta_star: params.to_vec(),
        fisher,
        sample_cap,
    })
}

/// `λ·Σ_anchors Σ_i F_i (θ_i − θ*_i)²` and its gradient.
pub fn ewc_penalty(params: &[f64], anchors: &[EwcAnchor], lambda: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let value = EwcPenalty { anchors, lambda }.apply(params, &mut grad)?;
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct EwcPenalty<'a> {
    pub anchors: &'a [EwcAnchor],
    pub lambda: f64,
}

impl Penalty for EwcPenalty<'_> {
    fn apply(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        ensure_len(params.len(), grad.len())?;
        let mut value = 0.0;
        for a in self.anchors {
            ensure_len(params.len(), a.theta_star.len())?;
            ensure_len(params.len(), a.fisher.len())?;
            for i in 0..params.len() {
                let diff = params[i] - a.theta_star[i];
                value += a.fisher[i] * diff * diff;
                grad[i] += 2.0 * self.lambda * a.fisher[i] * diff;
            }
        }
        Ok(self.lambda * value)
    }
}
