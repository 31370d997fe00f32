//! Experiment orchestration: configs, content-addressed resumable run
//! directories, report rendering and the built-in self-test.

mod config;
mod data;
mod report;
mod run;
mod selftest;

pub use crate::learners::{Algorithm, Architecture};
pub use config::{model_label, ExperimentConfig, NetworkConfig};
pub use data::{load_task_set, prepare_tasks, synthetic_task_set, TaskSet};
pub use report::{render_metric_reports, render_report, RenderedReport, REPORT_DECIMALS};
pub use run::{
    default_head_policy, run_experiment, run_experiment_with, run_fewshot, RunArtifact, RunMeta,
    RunOptions, VersionStamp,
};
pub use selftest::{
    auc_oracle_suite, brute_force_auc, gradient_suite, layout_roundtrip, micro_stream,
    random_scored_sets, selftest, Check, SelftestOptions, SelftestReport, AUC_TOLERANCE,
    GRADIENT_TOLERANCE,
};
