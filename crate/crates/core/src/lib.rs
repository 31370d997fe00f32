//! Continual-learning harness for streams of imbalanced binary text-classification
//! tasks.
//!
//! The crate is organised along the lifecycle of an experiment:
//!
//! - [`corpus`] harmonises raw datasets into [`corpus::UnifiedRecord`]s, expands
//!   labels into tasks and orders upstream tasks into streams.
//! - [`encoder`] is the frozen, deterministic hashed n-gram featurizer.
//! - [`neural`] holds the residual adapter stack, the classification head, the
//!   loss, explicit gradients and Adam.
//! - [`hypernet`] generates adapter and head weights from bi-level task
//!   representations.
//! - [`learners`] implements the upstream algorithms (single-task, sequential,
//!   multitask, EWC, generated-weight regularisation).
//! - [`fewshot`] adapts a trained upstream model to unseen downstream tasks.
//! - [`metrics`] computes AUC/F1, protocol aggregates and delta columns.
//! - [`harness`] ties everything into resumable, content-addressed runs.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fewshot;
pub mod harness;
pub mod hypernet;
pub mod learners;
pub mod metrics;
pub mod neural;
pub mod util;

pub use corpus::{
    DatasetDescriptor, Manifest, OrderingPolicy, Phase, Split, SyntheticConfig, Task, TaskStream,
    UnifiedRecord,
};
pub use encoder::{Embedding, EncoderConfig};
pub use error::{Error, Result};
pub use fewshot::{FewShotConfig, FewShotResult};
pub use harness::{Algorithm, Architecture, ExperimentConfig, RunArtifact};
pub use hypernet::{GeneratedWeights, GeneratorParams, TaskRepresentation};
pub use learners::TrainerConfig;
pub use metrics::{MetricReport, ScoredSet};
pub use neural::{AdamState, NetShape, ParamVector};
