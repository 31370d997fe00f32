use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{model_label, ExperimentConfig};
use super::data::{load_task_set, TaskSet};
use crate::corpus::{Manifest, Split};
use crate::error::{Error, Result};
use crate::fewshot::{evaluate_fewshot, FewShotConfig, FewShotResult, HeadPolicy};
use crate::learners::{
    final_scores, init_state, multitask_train, run_stream, Algorithm, Architecture, EwcAnchor,
    FitReport, Model, MultitaskModel, RegEntry, TaskOutcome, UpstreamRunState,
};
use crate::metrics::{aggregate, auc_scores, f1_scores, MetricReport, RunScores, ScoreRow};
use crate::neural::{Checkpoint, LAYOUT_VERSION};
use crate::util::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};

const CONFIG: &str = "config.json";
const META: &str = "meta.json";
const STATE: &str = "state.json";
const METRICS: &str = "metrics.jsonl";
const MODEL: &str = "model.ckpt.json";
const INSTANT: &str = "scores-instant.jsonl";
const FINAL: &str = "scores-final.jsonl";
const REPORT: &str = "report.json";

fn task_checkpoint(k: usize) -> String {
    format!("task-{k}.ckpt.json")
}

fn fewshot_results_file(k: usize) -> String {
    format!("fewshot-k{k}.jsonl")
}

fn fewshot_scores_file(k: usize) -> String {
    format!("scores-fewshot-k{k}.jsonl")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionStamp {
    pub crate_version: String,
    pub layout_version: u32,
    pub os: String,
    pub arch: String,
}

impl VersionStamp {
    pub fn current() -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            layout_version: LAYOUT_VERSION,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
        }
    }
}

/// Run-level facts written once when the run directory is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub config_hash: String,
    pub model: String,
    pub algorithm: Algorithm,
    pub architecture: Architecture,
    /// Directory the config's relative paths were resolved against.
    pub config_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub manifest: PathBuf,
    pub stream: String,
    pub upstream_tasks: Vec<String>,
    pub downstream_tasks: Vec<String>,
    pub fisher_sample_cap: usize,
    /// EWC anchors the generator parameters rather than generated weights.
    pub ewc_on_generator: bool,
    pub head_policy: HeadPolicy,
    /// Few-shot adaptation trains the adapters as well as the head.
    pub adapters_trainable: bool,
    /// What `model.ckpt.json` holds and few-shot adaptation starts from.
    pub fewshot_source: String,
    pub stamp: VersionStamp,
}

/// Resumable progress, rewritten after every completed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    config_hash: String,
    completed: Vec<String>,
    anchors: Vec<EwcAnchor>,
    memory: Vec<RegEntry>,
    outcomes: Vec<TaskOutcome>,
    upstream_done: bool,
    fewshot_done: Vec<usize>,
}

impl RunState {
    fn new(hash: &str) -> Self {
        Self {
            config_hash: hash.into(),
            completed: Vec::new(),
            anchors: Vec::new(),
            memory: Vec::new(),
            outcomes: Vec::new(),
            upstream_done: false,
            fewshot_done: Vec::new(),
        }
    }
}

/// Head handling for few-shot adaptation when the config leaves it open.
pub fn default_head_policy(algorithm: Algorithm) -> HeadPolicy {
    match algorithm {
        Algorithm::Vanilla | Algorithm::Ewc => HeadPolicy::ReuseHead,
        _ => HeadPolicy::NewHead,
    }
}

/// A run directory on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub run_id: String,
    pub dir: PathBuf,
    /// The config file exactly as it was read.
    pub config_snapshot: Vec<u8>,
    /// Per-task checkpoints in stream order, then the final model if present.
    pub checkpoints: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub meta: RunMeta,
    /// Upstream training and every configured evaluation have finished.
    pub complete: bool,
}

impl RunArtifact {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META);
        if !meta_path.exists() {
            return Err(Error::MissingArtifact(format!("run at {}", dir.display())));
        }
        let meta: RunMeta = read_json(&meta_path)?;
        let snapshot = fs::read(dir.join(CONFIG)).map_err(|e| Error::io(dir.join(CONFIG), e))?;
        let state: Option<RunState> = match dir.join(STATE) {
            p if p.exists() => Some(read_json(&p)?),
            _ => None,
        };
        let mut checkpoints: Vec<PathBuf> = (1..=meta.upstream_tasks.len())
            .map(|k| dir.join(task_checkpoint(k)))
            .filter(|p| p.exists())
            .collect();
        if dir.join(MODEL).exists() {
            checkpoints.push(dir.join(MODEL));
        }
        let config = parse_snapshot(&snapshot, &meta)?;
        let complete = state.is_some_and(|s| {
            s.upstream_done
                && config
                    .fewshot
                    .as_ref()
                    .is_none_or(|f| s.fewshot_done.contains(&f.k))
        });
        Ok(Self {
            run_id: meta.run_id.clone(),
            dir: dir.to_path_buf(),
            config_snapshot: snapshot,
            checkpoints,
            metrics: dir.join(METRICS),
            meta,
            complete,
        })
    }

    /// Opens `runs_dir/run_id`.
    pub fn locate(runs_dir: &Path, run_id: &str) -> Result<Self> {
        Self::open(&runs_dir.join(run_id))
    }

    /// The config as used by the run, with any seed override applied.
    pub fn config(&self) -> Result<ExperimentConfig> {
        parse_snapshot(&self.config_snapshot, &self.meta)
    }

    /// Few-shot shot counts with score files in this run.
    pub fn fewshot_ks(&self) -> Result<Vec<usize>> {
        let mut ks = Vec::new();
        for entry in fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let name = entry.map_err(|e| Error::io(&self.dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(k) = name
                .strip_prefix("scores-fewshot-k")
                .and_then(|r| r.strip_suffix(".jsonl"))
                .and_then(|k| k.parse().ok())
            {
                ks.push(k);
            }
        }
        ks.sort_unstable();
        Ok(ks)
    }

    pub fn scores(&self) -> Result<RunScores> {
        let read = |name: &str| -> Result<Vec<ScoreRow>> {
            let p = self.dir.join(name);
            if p.exists() {
                read_jsonl(&p)
            } else {
                Ok(Vec::new())
            }
        };
        let mut fewshot = BTreeMap::new();
        for k in self.fewshot_ks()? {
            fewshot.insert(k, read(&fewshot_scores_file(k))?);
        }
        Ok(RunScores {
            instant: read(INSTANT)?,
            final_: read(FINAL)?,
            fewshot,
        })
    }

    pub fn fewshot_results(&self, k: usize) -> Result<Vec<FewShotResult>> {
        read_jsonl(&self.dir.join(fewshot_results_file(k)))
    }

    /// Metrics recomputed from the score files.
    pub fn report(&self) -> Result<MetricReport> {
        if !self.complete {
            return Err(Error::MissingArtifact(format!(
                "run `{}` is incomplete",
                self.run_id
            )));
        }
        let expected_instant = if self.meta.algorithm.is_multitask() {
            Vec::new()
        } else {
            self.meta.upstream_tasks.clone()
        };
        aggregate(
            &self.run_id,
            &self.meta.model,
            &expected_instant,
            &self.meta.upstream_tasks,
            &self.scores()?,
        )
    }
}

fn parse_snapshot(snapshot: &[u8], meta: &RunMeta) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_slice(snapshot, &meta.config_dir)?;
    if let Some(seed) = meta.seed_override {
        cfg.override_seed(seed);
    }
    Ok(cfg)
}

/// Test-only control over a run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop, as if killed, once this many upstream tasks are checkpointed.
    pub stop_after: Option<usize>,
}

/// Trains, evaluates and persists one experiment, picking up where an
/// earlier process left off.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifact> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunArtifact> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    let hash = cfg.hash();
    let run_id = cfg.run_id();
    let manifest_path = cfg.manifest_path();
    let manifest = Manifest::load(&manifest_path)?;
    let tasks = load_task_set(&manifest, &cfg.stream, &cfg.encoder, cfg.seeds.data)?;
    if tasks.upstream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let policy = cfg
        .fewshot
        .as_ref()
        .and_then(|f| f.head_policy)
        .unwrap_or_else(|| default_head_policy(cfg.algorithm));
    let meta_path = dir.join(META);
    if meta_path.exists() {
        let meta: RunMeta = read_json(&meta_path)?;
        if meta.config_hash != hash {
            return Err(Error::ResumeMismatch {
                run_id,
                stored: meta.config_hash,
                current: hash,
            });
        }
        info!("resuming run {run_id}");
    } else {
        write_atomic(&dir.join(CONFIG), &cfg.snapshot())?;
        let meta = RunMeta {
            run_id: run_id.clone(),
            config_hash: hash.clone(),
            model: model_label(cfg.algorithm, cfg.architecture),
            algorithm: cfg.algorithm,
            architecture: cfg.architecture,
            config_dir: cfg.base_dir.clone(),
            seed_override: cfg.seed_override,
            manifest: manifest_path.clone(),
            stream: cfg.stream.clone(),
            upstream_tasks: tasks.upstream.iter().map(|t| t.task_id.clone()).collect(),
            downstream_tasks: tasks.downstream.iter().map(|t| t.task_id.clone()).collect(),
            fisher_sample_cap: cfg.trainer.fisher_sample_cap,
            ewc_on_generator: cfg.algorithm == Algorithm::BihnetEwc,
            head_policy: policy,
            adapters_trainable: true,
            fewshot_source: match cfg.algorithm {
                Algorithm::Single => "untrained initialisation".into(),
                a if a.is_multitask() => "jointly trained model, task heads dropped".into(),
                _ => "model after the last upstream task".into(),
            },
            stamp: VersionStamp::current(),
        };
        write_json(&meta_path, &meta)?;
        info!("created run {run_id} in {}", dir.display());
    }

    let state_path = dir.join(STATE);
    let mut state: RunState = if state_path.exists() {
        read_json(&state_path)?
    } else {
        RunState::new(&hash)
    };
    if state.config_hash != hash {
        return Err(Error::ResumeMismatch {
            run_id,
            stored: state.config_hash,
            current: hash,
        });
    }

    if !state.upstream_done {
        let finished = if cfg.algorithm.is_multitask() {
            train_multitask(cfg, &dir, &tasks, &mut state)?;
            true
        } else {
            train_sequential(cfg, &dir, &tasks, &mut state, opts)?
        };
        if !finished {
            return RunArtifact::open(&dir);
        }
    }

    if let Some(fs_cfg) = &cfg.fewshot {
        if !state.fewshot_done.contains(&fs_cfg.k) {
            let source = Model::from_checkpoint(&Checkpoint::load(&dir.join(MODEL))?)?;
            fewshot_into(
                &dir,
                &run_id,
                &source,
                policy,
                &tasks,
                fs_cfg,
                cfg.encoder.normalize,
            )?;
            state.fewshot_done.push(fs_cfg.k);
            state.fewshot_done.sort_unstable();
            write_json(&state_path, &state)?;
        }
    }
    finish(&dir, &state)
}

fn train_multitask(
    cfg: &ExperimentConfig,
    dir: &Path,
    tasks: &TaskSet,
    state: &mut RunState,
) -> Result<()> {
    let (model, report) = multitask_train(&cfg.inputs(), &tasks.upstream)?;
    model.to_checkpoint().save(&dir.join(task_checkpoint(1)))?;
    let rows = model.scores(&tasks.upstream, Split::Test)?;
    write_jsonl(&dir.join(FINAL), &rows)?;
    MultitaskModel {
        model: model.model.clone(),
        heads: BTreeMap::new(),
    }
    .to_checkpoint()
    .save(&dir.join(MODEL))?;
    state.outcomes = tasks
        .upstream
        .iter()
        .enumerate()
        .map(|(index, t)| outcome(t.task_id.clone(), index, report.clone(), &rows))
        .collect();
    state.completed = tasks.upstream.iter().map(|t| t.task_id.clone()).collect();
    state.upstream_done = true;
    write_metrics(dir, state)?;
    write_json(&dir.join(STATE), state)
}

/// AUC (when both classes occur) and F1 of one task's rows.
fn task_metrics(task_id: &str, rows: &[ScoreRow]) -> (Option<f64>, f64) {
    let (s, l): (Vec<f64>, Vec<u8>) = rows
        .iter()
        .filter(|r| r.task_id == task_id)
        .map(|r| (r.logit, r.label))
        .unzip();
    (auc_scores(&s, &l).ok(), f1_scores(&s, &l, 0.5))
}

fn outcome(task_id: String, index: usize, fit: FitReport, rows: &[ScoreRow]) -> TaskOutcome {
    let (test_auc, test_f1) = task_metrics(&task_id, rows);
    TaskOutcome {
        task_id,
        index,
        fit,
        test_auc,
        test_f1,
    }
}

/// Returns whether the whole stream has been trained.
fn train_sequential(
    cfg: &ExperimentConfig,
    dir: &Path,
    tasks: &TaskSet,
    state: &mut RunState,
    opts: RunOptions,
) -> Result<bool> {
    let inputs = cfg.inputs();
    let mut run = init_state(&inputs)?;
    if !state.completed.is_empty() {
        let k = state.completed.len();
        run.model = Model::from_checkpoint(&Checkpoint::load(&dir.join(task_checkpoint(k)))?)?;
        run.anchors = state.anchors.clone();
        run.memory = state.memory.clone();
        run.completed = state.completed.clone();
        run.outcomes = state.outcomes.clone();
        run.instant = read_jsonl(&dir.join(INSTANT))?;
    }
    let mut persist = |s: &UpstreamRunState| -> Result<bool> {
        let k = s.completed.len();
        s.model
            .to_checkpoint()
            .save(&dir.join(task_checkpoint(k)))?;
        write_jsonl(&dir.join(INSTANT), &s.instant)?;
        state.completed = s.completed.clone();
        state.anchors = s.anchors.clone();
        state.memory = s.memory.clone();
        state.outcomes = s.outcomes.clone();
        write_metrics(dir, state)?;
        write_json(&dir.join(STATE), state)?;
        info!(
            "task {k}/{} done: {}",
            tasks.upstream.len(),
            s.completed[k - 1]
        );
        Ok(opts.stop_after.is_none_or(|n| k < n))
    };
    if !run_stream(&inputs, &tasks.upstream, &mut run, &mut persist)? {
        return Ok(false);
    }
    write_jsonl(&dir.join(FINAL), &final_scores(&tasks.upstream, &run)?)?;
    let source = match cfg.algorithm {
        Algorithm::Single => inputs.fresh_model("init"),
        _ => run.model,
    };
    source.to_checkpoint().save(&dir.join(MODEL))?;
    state.upstream_done = true;
    write_metrics(dir, state)?;
    write_json(&dir.join(STATE), state)?;
    Ok(true)
}

fn fewshot_into(
    dir: &Path,
    run_id: &str,
    source: &Model,
    policy: HeadPolicy,
    tasks: &TaskSet,
    cfg: &FewShotConfig,
    normalize: bool,
) -> Result<()> {
    if tasks.downstream.is_empty() {
        return Err(Error::InvalidConfig(
            "manifest has no downstream tasks".into(),
        ));
    }
    let eval = evaluate_fewshot(source, policy, &tasks.downstream, cfg, normalize, run_id)?;
    write_jsonl(&dir.join(fewshot_results_file(cfg.k)), &eval.results)?;
    write_jsonl(&dir.join(fewshot_scores_file(cfg.k)), &eval.rows)?;
    info!(
        "few-shot k={}: mean AUC {}",
        cfg.k,
        eval.mean_auc.map_or("-".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

#[derive(Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum MetricLine<'a> {
    Task(&'a TaskOutcome),
    Final {
        task_id: &'a str,
        auc: Option<f64>,
        f1: f64,
    },
    Fewshot {
        k: usize,
        task_id: &'a str,
        auc: Option<f64>,
        f1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<&'a str>,
    },
}

/// Rewrites `metrics.jsonl` from the state and the score files, so a resumed
/// run ends with the same file as an uninterrupted one.
fn write_metrics(dir: &Path, state: &RunState) -> Result<()> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<u8>, line: &MetricLine| -> Result<()> {
        serde_json::to_writer(&mut *out, line)?;
        out.push(b'\n');
        Ok(())
    };
    for o in &state.outcomes {
        push(&mut out, &MetricLine::Task(o))?;
    }
    if state.upstream_done {
        let rows: Vec<ScoreRow> = read_jsonl(&dir.join(FINAL))?;
        for task in &state.completed {
            let (auc, f1) = task_metrics(task, &rows);
            push(
                &mut out,
                &MetricLine::Final {
                    task_id: task,
                    auc,
                    f1,
                },
            )?;
        }
    }
    for &k in &state.fewshot_done {
        let results: Vec<FewShotResult> = read_jsonl(&dir.join(fewshot_results_file(k)))?;
        for r in &results {
            push(
                &mut out,
                &MetricLine::Fewshot {
                    k,
                    task_id: &r.task_id,
                    auc: r.auc,
                    f1: r.f1,
                    error: r.error.as_deref(),
                },
            )?;
        }
    }
    write_atomic(&dir.join(METRICS), &out)
}

fn finish(dir: &Path, state: &RunState) -> Result<RunArtifact> {
    write_metrics(dir, state)?;
    let artifact = RunArtifact::open(dir)?;
    if artifact.complete {
        write_json(&dir.join(REPORT), &artifact.report()?)?;
    }
    Ok(artifact)
}

/// Few-shot evaluation of a finished run at `k` (the config's value when
/// `None`). Results are cached in the run directory.
pub fn run_fewshot(artifact: &RunArtifact, k: Option<usize>) -> Result<Vec<FewShotResult>> {
    let cfg = artifact.config()?;
    if cfg.hash() != artifact.meta.config_hash {
        return Err(Error::ResumeMismatch {
            run_id: artifact.run_id.clone(),
            stored: artifact.meta.config_hash.clone(),
            current: cfg.hash(),
        });
    }
    let state_path = artifact.dir.join(STATE);
    let mut state: RunState = read_json(&state_path)?;
    if !state.upstream_done {
        return Err(Error::MissingArtifact(format!(
            "run `{}` has not finished upstream training",
            artifact.run_id
        )));
    }
    let mut fs_cfg = cfg.fewshot.clone().unwrap_or_default();
    if let Some(k) = k {
        fs_cfg.k = k;
    }
    fs_cfg.validate()?;
    if !state.fewshot_done.contains(&fs_cfg.k) {
        let manifest = Manifest::load(&artifact.meta.manifest)?;
        let tasks = load_task_set(&manifest, &cfg.stream, &cfg.encoder, cfg.seeds.data)?;
        let source = Model::from_checkpoint(&Checkpoint::load(&artifact.dir.join(MODEL))?)?;
        fewshot_into(
            &artifact.dir,
            &artifact.run_id,
            &source,
            artifact.meta.head_policy,
            &tasks,
            &fs_cfg,
            cfg.encoder.normalize,
        )?;
        state.fewshot_done.push(fs_cfg.k);
        state.fewshot_done.sort_unstable();
        write_json(&state_path, &state)?;
        finish(&artifact.dir, &state)?;
    }
    artifact.fewshot_results(fs_cfg.k)
}
