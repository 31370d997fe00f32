//! Downstream k-shot adaptation of a trained upstream model.

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::hypernet::{task_rep_from_embeddings, RepMode};
use crate::learners::{
    fit, score_task, Batching, Examples, FitConfig, HyperObjective, Model, Objective, TaskData,
};
use crate::metrics::{auc_scores, f1_scores, ScoreRow};
use crate::neural::Layout;
use crate::util::{derive_seed, rng};

/// What happens to the classification head of an adapter snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadPolicy {
    /// Zero-initialised head.
    NewHead,
    /// Keep the snapshot's head.
    ReuseHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    /// Shots per class (or `2k` in total when not balanced).
    pub k: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Draw k positives and k negatives; otherwise 2k records at the natural rate.
    pub balanced: bool,
    pub learning_rate: f64,
    /// Head handling for adapter snapshots; `None` lets the harness pick per
    /// algorithm.
    pub head_policy: Option<HeadPolicy>,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            k: 16,
            epochs: 800,
            seed: 0,
            balanced: true,
            learning_rate: 1e-3,
            head_policy: None,
        }
    }
}

impl FewShotConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "fewshot: k and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "fewshot: learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        if self.k == 8 {
            8
        } else {
            16
        }
    }

    fn fit_config(&self) -> FitConfig {
        FitConfig {
            batch_size: self.batch_size(),
            epochs: self.epochs,
            patience: None,
            learning_rate: self.learning_rate,
            batching: Batching::Shuffled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotResult {
    pub task_id: String,
    pub k: usize,
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    /// Record ids of the shots.
    pub shots: Vec<String>,
    pub source_run: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Indices into a task's training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shots {
    pub indices: Vec<usize>,
    /// A class had fewer than k training examples.
    pub deficient: bool,
}

fn pick<R: Rng>(pool: &[usize], k: usize, r: &mut R) -> Vec<usize> {
    if pool.len() <= k {
        return pool.to_vec();
    }
    let mut out: Vec<usize> = sample(r, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    out.sort_unstable();
    out
}

/// Draws shots from the training split, uniformly without replacement.
pub fn sample_shots(task: &TaskData, k: usize, balanced: bool, seed: u64) -> Result<Shots> {
    let train = &task.train;
    if train.is_empty() {
        return Err(Error::EmptyTask(task.task_id.clone()));
    }
    let mut r = rng(seed, &format!("shots/{}/{k}", task.task_id));
    if !balanced {
        let all: Vec<usize> = (0..train.len()).collect();
        return Ok(Shots {
            deficient: train.len() < 2 * k,
            indices: pick(&all, 2 * k, &mut r),
        });
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..train.len()).partition(|&i| train.ys[i] == 1);
    let deficient = pos.len() < k || neg.len() < k;
    if deficient {
        warn!(
            "task {}: {} positives and {} negatives available for k={k}",
            task.task_id,
            pos.len(),
            neg.len()
        );
    }
    let mut indices = pick(&pos, k, &mut r);
    indices.extend(pick(&neg, k, &mut r));
    Ok(Shots { indices, deficient })
}

/// The trainable starting point of an adaptation and its objective.
pub struct Adapted {
    pub objective: Box<dyn Objective>,
    pub params: Vec<f64>,
}

impl Adapted {
    pub fn scores(&self, task: &TaskData, split: Split) -> Result<Vec<ScoreRow>> {
        score_task(self.objective.as_ref(), &self.params, task, split)
    }
}

fn subset(ex: &Examples, idx: &[usize]) -> Examples {
    let mut out = Examples::default();
    for &i in idx {
        out.push(ex.ids[i].clone(), ex.xs[i].clone(), ex.ys[i]);
    }
    out
}

/// Fine-tunes a copy of `source` on the shots for `cfg.epochs` epochs and
/// keeps the final parameters.
///
/// Adapter snapshots train adapters and head (the head zeroed under
/// [`HeadPolicy::NewHead`]). Generator snapshots compute the long
/// representation from the shot texts and train the generator in long-only
/// mode. `normalize` must match the encoder setting used upstream.
pub fn adapt(
    source: &Model,
    policy: HeadPolicy,
    task: &TaskData,
    shots: &Shots,
    cfg: &FewShotConfig,
    normalize: bool,
) -> Result<Adapted> {
    let train = subset(&task.train, &shots.indices);
    if train.is_empty() {
        return Err(Error::EmptyTask(task.task_id.clone()));
    }
    let mut params = source.values().to_vec();
    let objective: Box<dyn Objective> = match source {
        Model::Adapter(p) => {
            if policy == HeadPolicy::NewHead {
                let a = Layout::new(p.shape).adapter_len();
                params[a..].iter_mut().for_each(|v| *v = 0.0);
            }
            source.objective(task, RepMode::Bilevel)
        }
        Model::Hyper(g) => {
            let rep = task_rep_from_embeddings(&task.task_id, &train.views(), normalize, cfg.seed)?;
            Box::new(HyperObjective::new(g.shape, rep, RepMode::LongOnly))
        }
    };
    if cfg.epochs > 0 {
        let shot_task = TaskData {
            task_id: task.task_id.clone(),
            train,
            dev: Examples::default(),
            test: Examples::default(),
            rep: task.rep.clone(),
        };
        fit(
            &mut params,
            &[(objective.as_ref(), &shot_task)],
            None,
            &cfg.fit_config(),
            derive_seed(cfg.seed, &format!("adapt/{}", task.task_id)),
        )?;
    }
    Ok(Adapted { objective, params })
}

/// Results of a few-shot sweep over downstream tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotEvaluation {
    pub results: Vec<FewShotResult>,
    pub rows: Vec<ScoreRow>,
    pub mean_auc: Option<f64>,
    pub mean_f1: Option<f64>,
}

fn one_task(
    source: &Model,
    policy: HeadPolicy,
    task: &TaskData,
    cfg: &FewShotConfig,
    normalize: bool,
) -> Result<(Vec<String>, Vec<ScoreRow>, f64, f64)> {
    let shots = sample_shots(task, cfg.k, cfg.balanced, cfg.seed)?;
    let adapted = adapt(source, policy, task, &shots, cfg, normalize)?;
    let rows = adapted.scores(task, Split::Test)?;
    let (s, l): (Vec<f64>, Vec<u8>) = rows.iter().map(|r| (r.logit, r.label)).unzip();
    let auc = auc_scores(&s, &l)?;
    let f1 = f1_scores(&s, &l, 0.5);
    let ids = shots
        .indices
        .iter()
        .map(|&i| task.train.ids[i].clone())
        .collect();
    Ok((ids, rows, auc, f1))
}

/// Adapts `source` independently to every task (in parallel) and scores the
/// test splits. Per-task failures are recorded in the result, not raised.
pub fn evaluate_fewshot(
    source: &Model,
    policy: HeadPolicy,
    tasks: &[TaskData],
    cfg: &FewShotConfig,
    normalize: bool,
    source_run: &str,
) -> Result<FewShotEvaluation> {
    cfg.validate()?;
    let outcomes: Vec<_> = tasks
        .par_iter()
        .map(|t| one_task(source, policy, t, cfg, normalize))
        .collect();
    let mut results = Vec::new();
    let mut rows = Vec::new();
    for (task, outcome) in tasks.iter().zip(outcomes) {
        let mut r = FewShotResult {
            task_id: task.task_id.clone(),
            k: cfg.k,
            auc: None,
            f1: None,
            shots: Vec::new(),
            source_run: source_run.to_string(),
            error: None,
        };
        match outcome {
            Ok((shots, task_rows, auc, f1)) => {
                r.shots = shots;
                r.auc = Some(auc);
                r.f1 = Some(f1);
                rows.extend(task_rows);
            }
            Err(e) => {
                warn!("few-shot task {} failed: {e}", task.task_id);
                r.error = Some(e.to_string());
            }
        }
        results.push(r);
    }
    let mean = |f: fn(&FewShotResult) -> Option<f64>| {
        let v: Vec<f64> = results.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    Ok(FewShotEvaluation {
        mean_auc: mean(|r| r.auc),
        mean_f1: mean(|r| r.f1),
        results,
        rows,
    })
}
