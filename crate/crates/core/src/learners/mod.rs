//! Upstream training: the imbalance-aware training loop and the continual
//! algorithms built on it.

mod early;
mod ewc;
mod fit;
mod objective;
mod reg;
mod sampler;
mod stream;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::hypernet::TaskRepresentation;

pub use early::{EarlyStopping, Verdict};
pub use ewc::{ewc_estimate, ewc_penalty, EwcAnchor, EwcPenalty};
pub use fit::{fit, Batching, FitConfig, FitReport};
pub use objective::{AdapterObjective, HyperObjective, MultiHeadObjective, Objective, Penalty};
pub use reg::{bihnet_reg_penalty, RegEntry, RegPenalty};
pub use sampler::{shuffled_batches, WeightedSampler};
pub use stream::{
    final_scores, init_state, multitask_train, run_stream, score_task, single_task_train, Model,
    MultitaskModel, Seeds, StreamInputs, TaskOutcome, UpstreamRunState,
};

/// Settings of the shared upstream training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev-F1 improvement before stopping.
    pub patience: usize,
    /// Lower bound on the per-draw positive probability of the sampler.
    pub min_positive_fraction: f64,
    pub learning_rate: f64,
    /// Examples used for each Fisher estimate.
    pub fisher_sample_cap: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 100,
            patience: 3,
            min_positive_fraction: 0.3,
            learning_rate: 1e-3,
            fisher_sample_cap: 1024,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("trainer: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.min_positive_fraction > 0.0 && self.min_positive_fraction < 1.0) {
            return bad("min_positive_fraction must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.fisher_sample_cap == 0 {
            return bad("fisher_sample_cap must be positive");
        }
        Ok(())
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            batch_size: self.batch_size,
            epochs: self.max_epochs,
            patience: Some(self.patience),
            learning_rate: self.learning_rate,
            batching: Batching::Weighted {
                min_positive_fraction: self.min_positive_fraction,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Single,
    Vanilla,
    Multitask,
    Ewc,
    BihnetVanilla,
    BihnetReg,
    BihnetEwc,
    BihnetMultitask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Adapter,
    Bihnet,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Single,
        Algorithm::Vanilla,
        Algorithm::Multitask,
        Algorithm::Ewc,
        Algorithm::BihnetVanilla,
        Algorithm::BihnetReg,
        Algorithm::BihnetEwc,
        Algorithm::BihnetMultitask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Single => "single",
            Algorithm::Vanilla => "vanilla",
            Algorithm::Multitask => "multitask",
            Algorithm::Ewc => "ewc",
            Algorithm::BihnetVanilla => "bihnet-vanilla",
            Algorithm::BihnetReg => "bihnet-reg",
            Algorithm::BihnetEwc => "bihnet-ewc",
            Algorithm::BihnetMultitask => "bihnet-multitask",
        }
    }

    pub fn supports(self, arch: Architecture) -> bool {
        match self {
            Algorithm::Single => true,
            Algorithm::Vanilla | Algorithm::Multitask | Algorithm::Ewc => {
                arch == Architecture::Adapter
            }
            _ => arch == Architecture::Bihnet,
        }
    }

    pub fn is_multitask(self) -> bool {
        matches!(self, Algorithm::Multitask | Algorithm::BihnetMultitask)
    }

    pub fn uses_ewc(self) -> bool {
        matches!(self, Algorithm::Ewc | Algorithm::BihnetEwc)
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown algorithm `{s}`")))
    }
}

/// Embedded examples of one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Examples {
    pub ids: Vec<String>,
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<u8>,
}

impl Examples {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn views(&self) -> Vec<&[f64]> {
        self.xs.iter().map(Vec::as_slice).collect()
    }

    pub fn push(&mut self, id: String, x: Vec<f64>, y: u8) {
        self.ids.push(id);
        self.xs.push(x);
        self.ys.push(y);
    }

    pub fn positives(&self) -> usize {
        self.ys.iter().filter(|&&y| y == 1).count()
    }
}

/// A task with its embedded splits and bi-level representation.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub train: Examples,
    pub dev: Examples,
    pub test: Examples,
    pub rep: TaskRepresentation,
}

impl TaskData {
    pub fn split(&self, split: Split) -> &Examples {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::corpus::{
        generate_synthetic, make_splits, SplitRatios, SyntheticConfig, SYNTH_LABEL,
    };
    use crate::encoder::{embed, EncoderConfig};
    use crate::hypernet::task_rep_from_embeddings;

    /// Embedded synthetic tasks, in task order.
    pub fn synthetic_tasks(cfg: &SyntheticConfig, dim: usize) -> Vec<TaskData> {
        let enc = EncoderConfig::with_dim(dim);
        let corpus = generate_synthetic(cfg).unwrap();
        corpus
            .records
            .into_iter()
            .map(|(name, rows)| {
                let rows = make_splits(rows, SplitRatios::default(), 0).unwrap();
                let mut splits = [
                    Examples::default(),
                    Examples::default(),
                    Examples::default(),
                ];
                for r in rows {
                    let i = match r.split.unwrap() {
                        Split::Train => 0,
                        Split::Dev => 1,
                        Split::Test => 2,
                    };
                    splits[i].push(r.id.clone(), embed(&r.text, &enc).0, r.labels[SYNTH_LABEL]);
                }
                let [train, dev, test] = splits;
                let id = format!("{name}/{SYNTH_LABEL}");
                let rep = task_rep_from_embeddings(&id, &train.views(), true, 0).unwrap();
                TaskData {
                    task_id: id,
                    train,
                    dev,
                    test,
                    rep,
                }
            })
            .collect()
    }
}
