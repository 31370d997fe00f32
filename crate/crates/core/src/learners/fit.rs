use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::objective::{Objective, Penalty};
use super::sampler::{shuffled_batches, WeightedSampler};
use super::{EarlyStopping, TaskData};
use crate::error::{ensure_len, Error, Result};
use crate::metrics::f1_scores;
use crate::neural::AdamState;
use crate::util::rng;

/// How an epoch's batches are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Batching {
    /// Imbalance-aware draws with replacement.
    Weighted { min_positive_fraction: f64 },
    /// Every example once per epoch, in random order.
    Shuffled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` trains for exactly `epochs` and keeps the last parameters.
    pub patience: Option<usize>,
    pub learning_rate: f64,
    pub batching: Batching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    /// Mean dev F1 per epoch; empty without early stopping.
    pub dev_f1: Vec<f64>,
    /// Mean training loss of the last epoch.
    pub last_loss: f64,
}

fn selection_f1(obj: &dyn Objective, params: &[f64], task: &TaskData) -> Result<f64> {
    let split = if task.dev.is_empty() {
        &task.train
    } else {
        &task.dev
    };
    let logits = obj.logits(params, &split.views())?;
    Ok(f1_scores(&logits, &split.ys, 0.5))
}

fn epoch_batches<R: Rng>(
    samplers: &[Option<WeightedSampler>],
    tasks: &[(&dyn Objective, &TaskData)],
    cfg: &FitConfig,
    r: &mut R,
) -> Vec<(usize, Vec<usize>)> {
    let bs = cfg.batch_size;
    if tasks.len() == 1 {
        let batches = match &samplers[0] {
            Some(s) => s.epoch(bs, r),
            None => shuffled_batches(tasks[0].1.train.len(), bs, r),
        };
        return batches.into_iter().map(|b| (0, b)).collect();
    }
    match cfg.batching {
        Batching::Weighted { .. } => {
            let steps: usize = tasks.iter().map(|(_, t)| t.train.len().div_ceil(bs)).sum();
            (0..steps)
                .map(|_| {
                    let t = r.gen_range(0..tasks.len());
                    let s = samplers[t].as_ref().expect("weighted sampler");
                    (t, (0..bs).map(|_| s.draw(r)).collect())
                })
                .collect()
        }
        Batching::Shuffled => {
            let mut all: Vec<(usize, Vec<usize>)> = tasks
                .iter()
                .enumerate()
                .flat_map(|(t, (_, d))| {
                    shuffled_batches(d.train.len(), bs, r)
                        .into_iter()
                        .map(move |b| (t, b))
                        .collect::<Vec<_>>()
                })
                .collect();
            all.shuffle(r);
            all
        }
    }
}

/// Trains `params` on one or more tasks with Adam (fresh state per call).
///
/// With several tasks, each step picks a task uniformly at random. With
/// patience set, the mean dev F1 after every epoch drives early stopping and
/// the best epoch's parameters are restored.
pub fn fit(
    params: &mut [f64],
    tasks: &[(&dyn Objective, &TaskData)],
    penalty: Option<&dyn Penalty>,
    cfg: &FitConfig,
    seed: u64,
) -> Result<FitReport> {
    if tasks.is_empty() {
        return Err(Error::EmptyInput);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidConfig(
            "fit needs a positive batch size and epoch count".into(),
        ));
    }
    for (obj, task) in tasks {
        ensure_len(obj.len(), params.len())?;
        if task.train.is_empty() {
            return Err(Error::EmptyTask(task.task_id.clone()));
        }
    }
    let samplers: Vec<Option<WeightedSampler>> = tasks
        .iter()
        .map(|(_, t)| match cfg.batching {
            Batching::Weighted {
                min_positive_fraction,
            } => WeightedSampler::new(&t.task_id, &t.train.ys, min_positive_fraction).map(Some),
            Batching::Shuffled => Ok(None),
        })
        .collect::<Result<_>>()?;
    let mut r = rng(seed, "fit");
    let mut adam = AdamState::new(params.len(), cfg.learning_rate);
    let mut stopper = cfg.patience.map(EarlyStopping::new);
    let mut best = params.to_vec();
    let mut report = FitReport {
        epochs_run: 0,
        best_epoch: 0,
        dev_f1: Vec::new(),
        last_loss: f64::NAN,
    };
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let batches = epoch_batches(&samplers, tasks, cfg, &mut r);
        for (t, batch) in &batches {
            let (obj, task) = tasks[*t];
            let xs: Vec<&[f64]> = batch.iter().map(|&i| task.train.xs[i].as_slice()).collect();
            let ys: Vec<u8> = batch.iter().map(|&i| task.train.ys[i]).collect();
            let (mut loss, mut grad) = obj.loss_grad(params, &xs, &ys)?;
            if let Some(p) = penalty {
                loss += p.apply(params, &mut grad)?;
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss);
            }
            total += loss;
            adam.step(params, &grad)?;
        }
        report.epochs_run = epoch;
        report.last_loss = total / batches.len().max(1) as f64;
        let Some(es) = stopper.as_mut() else {
            report.best_epoch = epoch;
            continue;
        };
        let mut f1 = 0.0;
        for (obj, task) in tasks {
            f1 += selection_f1(*obj, params, task)?;
        }
        f1 /= tasks.len() as f64;
        report.dev_f1.push(f1);
        let verdict = es.update(epoch, f1);
        if verdict.improved {
            best.copy_from_slice(params);
            report.best_epoch = epoch;
        }
        if verdict.stop {
            break;
        }
    }
    if stopper.is_some() {
        params.copy_from_slice(&best);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SyntheticConfig;
    use crate::learners::testutil::synthetic_tasks;
    use crate::learners::{AdapterObjective, Examples};
    use crate::metrics::auc_scores;
    use crate::neural::{NetShape, ParamVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(patience: Option<usize>) -> FitConfig {
        FitConfig {
            batch_size: 16,
            epochs: 20,
            patience,
            learning_rate: 1e-2,
            batching: Batching::Weighted {
                min_positive_fraction: 0.3,
            },
        }
    }

    #[test]
    fn learns_a_marker_task_and_is_deterministic() {
        let tasks = synthetic_tasks(&SyntheticConfig::default(), 64);
        let shape = NetShape::new(64, 8, 1);
        let obj = AdapterObjective::new(shape);
        let init = ParamVector::init(shape, &mut ChaCha8Rng::seed_from_u64(0)).values;
        let mut a = init.clone();
        let rep = fit(&mut a, &[(&obj, &tasks[0])], None, &cfg(Some(3)), 5).unwrap();
        let mut b = init;
        fit(&mut b, &[(&obj, &tasks[0])], None, &cfg(Some(3)), 5).unwrap();
        assert_eq!(a, b);
        assert!(rep.best_epoch >= 1 && rep.best_epoch <= rep.epochs_run);
        assert_eq!(rep.dev_f1.len(), rep.epochs_run);
        let test = &tasks[0].test;
        let logits = obj.logits(&a, &test.views()).unwrap();
        let auc = auc_scores(&logits, &test.ys).unwrap();
        assert!(auc > 0.9, "{auc} {rep:?}");
    }

    #[test]
    fn restores_best_epoch() {
        let tasks = synthetic_tasks(&SyntheticConfig::default(), 32);
        let shape = NetShape::new(32, 4, 1);
        let obj = AdapterObjective::new(shape);
        let mut p = ParamVector::init(shape, &mut ChaCha8Rng::seed_from_u64(1)).values;
        let rep = fit(&mut p, &[(&obj, &tasks[0])], None, &cfg(Some(2)), 0).unwrap();
        let best = rep.dev_f1[rep.best_epoch - 1];
        assert!(rep.dev_f1.iter().all(|&f| f <= best));
        assert_eq!(selection_f1(&obj, &p, &tasks[0]).unwrap(), best);
    }

    #[test]
    fn single_class_training_split_is_rejected() {
        let mut tasks = synthetic_tasks(&SyntheticConfig::default(), 16);
        let t = &mut tasks[0];
        t.train.ys.iter_mut().for_each(|y| *y = 0);
        let shape = NetShape::new(16, 4, 1);
        let obj = AdapterObjective::new(shape);
        let mut p = ParamVector::zeros(shape).values;
        let err = fit(&mut p, &[(&obj, &tasks[0])], None, &cfg(Some(3)), 0).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(_)));
        tasks[0].train = Examples::default();
        let err = fit(&mut p, &[(&obj, &tasks[0])], None, &cfg(Some(3)), 0).unwrap_err();
        assert!(matches!(err, Error::EmptyTask(_)));
    }

    #[test]
    fn fixed_epochs_without_patience() {
        let tasks = synthetic_tasks(&SyntheticConfig::default(), 16);
        let shape = NetShape::new(16, 4, 1);
        let obj = AdapterObjective::new(shape);
        let mut p = ParamVector::zeros(shape).values;
        let c = FitConfig {
            epochs: 4,
            batching: Batching::Shuffled,
            ..cfg(None)
        };
        let rep = fit(&mut p, &[(&obj, &tasks[0])], None, &c, 0).unwrap();
        assert_eq!((rep.epochs_run, rep.best_epoch), (4, 4));
        assert!(rep.dev_f1.is_empty());
    }
}
