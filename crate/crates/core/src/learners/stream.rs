use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ewc::{ewc_estimate, EwcAnchor, EwcPenalty};
use super::fit::{fit, FitReport};
use super::objective::{AdapterObjective, HyperObjective, MultiHeadObjective, Objective, Penalty};
use super::reg::{RegEntry, RegPenalty};
use super::{Algorithm, Architecture, TaskData, TrainerConfig};
use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::hypernet::{GeneratorParams, GeneratorShape, RepMode};
use crate::metrics::{auc_scores, f1_scores, ScoreRow};
use crate::neural::{Checkpoint, Layout, NetShape, ParamVector};
use crate::util::{derive_seed, rng};

/// Every seed of a run. All three must be given explicitly in a config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Splits, short representations and Fisher subsets.
    pub data: u64,
    /// Parameter initialisation.
    pub init: u64,
    /// Batch sampling.
    pub sampler: u64,
}

/// Everything an upstream run needs besides the tasks themselves.
#[derive(Debug, Clone)]
pub struct StreamInputs<'a> {
    pub algorithm: Algorithm,
    pub architecture: Architecture,
    pub shape: NetShape,
    pub generator_hidden: usize,
    pub trainer: &'a TrainerConfig,
    pub lambda: f64,
    pub seeds: Seeds,
}

impl StreamInputs<'_> {
    pub fn generator_shape(&self) -> GeneratorShape {
        GeneratorShape {
            target: self.shape,
            d_z: self.shape.dim,
            hidden: self.generator_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.trainer.validate()?;
        if !self.algorithm.supports(self.architecture) {
            return Err(Error::InvalidConfig(format!(
                "algorithm `{}` does not run on the {:?} architecture",
                self.algorithm.name(),
                self.architecture
            )));
        }
        if self.architecture == Architecture::Bihnet && self.generator_hidden == 0 {
            return Err(Error::InvalidConfig(
                "generator_hidden must be positive".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(
                "lambda must be a non-negative number".into(),
            ));
        }
        Ok(())
    }

    pub fn fresh_model(&self, tag: &str) -> Model {
        Model::fresh(
            self.architecture,
            self.generator_shape(),
            self.seeds.init,
            tag,
        )
    }

    fn fit_seed(&self, task_id: &str) -> u64 {
        derive_seed(self.seeds.sampler, &format!("task/{task_id}"))
    }
}

/// Trainable parameters of an upstream model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Adapter(ParamVector),
    Hyper(GeneratorParams),
}

impl Model {
    /// Freshly initialised parameters; `shape.target` is used for adapters.
    pub fn fresh(architecture: Architecture, shape: GeneratorShape, seed: u64, tag: &str) -> Model {
        let mut r = rng(seed, tag);
        match architecture {
            Architecture::Adapter => Model::Adapter(ParamVector::init(shape.target, &mut r)),
            Architecture::Bihnet => Model::Hyper(GeneratorParams::init(shape, &mut r)),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Model::Adapter(p) => &p.values,
            Model::Hyper(g) => &g.values,
        }
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        match self {
            Model::Adapter(p) => &mut p.values,
            Model::Hyper(g) => &mut g.values,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Adapter(_) => Architecture::Adapter,
            Model::Hyper(_) => Architecture::Bihnet,
        }
    }

    pub fn objective(&self, task: &TaskData, mode: RepMode) -> Box<dyn Objective> {
        match self {
            Model::Adapter(p) => Box::new(AdapterObjective::new(p.shape)),
            Model::Hyper(g) => Box::new(HyperObjective::new(g.shape, task.rep.clone(), mode)),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            Model::Adapter(p) => Checkpoint::from_params(p),
            Model::Hyper(g) => g.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_version()?;
        if ckpt.hypernet.is_some() {
            Ok(Model::Hyper(GeneratorParams::from_checkpoint(ckpt)?))
        } else {
            Ok(Model::Adapter(ckpt.params()?))
        }
    }
}

/// Summary of one trained task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub index: usize,
    pub fit: FitReport,
    /// `None` when the test split holds a single class.
    pub test_auc: Option<f64>,
    pub test_f1: f64,
}

/// Progress of a sequential upstream run.
#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamRunState {
    pub algorithm: Algorithm,
    pub model: Model,
    pub anchors: Vec<EwcAnchor>,
    pub memory: Vec<RegEntry>,
    /// Prefix of the stream already trained.
    pub completed: Vec<String>,
    /// Test scores recorded right after each task's training.
    pub instant: Vec<ScoreRow>,
    pub outcomes: Vec<TaskOutcome>,
}

pub fn init_state(inputs: &StreamInputs) -> Result<UpstreamRunState> {
    inputs.validate()?;
    Ok(UpstreamRunState {
        algorithm: inputs.algorithm,
        model: inputs.fresh_model("init"),
        anchors: Vec::new(),
        memory: Vec::new(),
        completed: Vec::new(),
        instant: Vec::new(),
        outcomes: Vec::new(),
    })
}

/// Logits of one split as score rows.
pub fn score_task(
    objective: &dyn Objective,
    params: &[f64],
    task: &TaskData,
    split: Split,
) -> Result<Vec<ScoreRow>> {
    let ex = task.split(split);
    let logits = objective.logits(params, &ex.views())?;
    Ok(ex
        .ids
        .iter()
        .zip(logits)
        .zip(&ex.ys)
        .map(|((id, logit), &label)| ScoreRow {
            task_id: task.task_id.clone(),
            split,
            record_id: id.clone(),
            logit,
            label,
        })
        .collect())
}

fn summarize(task: &TaskData, index: usize, fit: FitReport, rows: &[ScoreRow]) -> TaskOutcome {
    let scores: Vec<f64> = rows.iter().map(|r| r.logit).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    TaskOutcome {
        task_id: task.task_id.clone(),
        index,
        fit,
        test_auc: auc_scores(&scores, &labels).ok(),
        test_f1: f1_scores(&scores, &labels, 0.5),
    }
}

/// Trains the remaining tasks of `tasks` in order, continuing from `state`.
///
/// After every task, `hook` sees the updated state and may return `false` to
/// stop early. Returns whether the whole stream was processed.
pub fn run_stream(
    inputs: &StreamInputs,
    tasks: &[TaskData],
    state: &mut UpstreamRunState,
    hook: &mut dyn FnMut(&UpstreamRunState) -> Result<bool>,
) -> Result<bool> {
    inputs.validate()?;
    if inputs.algorithm.is_multitask() {
        return Err(Error::InvalidConfig(format!(
            "`{}` trains jointly; use multitask_train",
            inputs.algorithm.name()
        )));
    }
    if tasks.is_empty() {
        return Err(Error::EmptyStream);
    }
    let done = state.completed.len();
    if done > tasks.len()
        || tasks
            .iter()
            .zip(&state.completed)
            .any(|(t, c)| &t.task_id != c)
    {
        return Err(Error::InvalidConfig(
            "completed tasks are not a prefix of the stream".into(),
        ));
    }
    let fit_cfg = inputs.trainer.fit_config();
    for (index, task) in tasks.iter().enumerate().skip(done) {
        if inputs.algorithm == Algorithm::Single {
            state.model = inputs.fresh_model(&format!("init/{}", task.task_id));
        }
        let objective = state.model.objective(task, RepMode::Bilevel);
        let ewc;
        let reg;
        let penalty: Option<&dyn Penalty> = match inputs.algorithm {
            Algorithm::Ewc | Algorithm::BihnetEwc if inputs.lambda > 0.0 => {
                ewc = EwcPenalty {
                    anchors: &state.anchors,
                    lambda: inputs.lambda,
                };
                Some(&ewc)
            }
            Algorithm::BihnetReg if inputs.lambda > 0.0 => {
                reg = RegPenalty {
                    shape: inputs.generator_shape(),
                    memory: &state.memory,
                    lambda: inputs.lambda,
                };
                Some(&reg)
            }
            _ => None,
        };
        let mut params = state.model.values().to_vec();
        let report = fit(
            &mut params,
            &[(objective.as_ref(), task)],
            penalty,
            &fit_cfg,
            inputs.fit_seed(&task.task_id),
        )?;
        state.model.values_mut().copy_from_slice(&params);
        match (inputs.algorithm, &state.model) {
            (Algorithm::Ewc | Algorithm::BihnetEwc, _) => state.anchors.push(ewc_estimate(
                &task.task_id,
                objective.as_ref(),
                &params,
                &task.train,
                inputs.trainer.fisher_sample_cap,
                inputs.seeds.data,
            )?),
            (Algorithm::BihnetReg, Model::Hyper(g)) => {
                state.memory.push(RegEntry::snapshot(&task.rep, g)?)
            }
            _ => {}
        }
        let rows = score_task(objective.as_ref(), &params, task, Split::Test)?;
        state.outcomes.push(summarize(task, index, report, &rows));
        state.instant.extend(rows);
        state.completed.push(task.task_id.clone());
        if !hook(state)? {
            return Ok(index + 1 == tasks.len());
        }
    }
    Ok(true)
}

/// Test scores of every task under the final model. Single-task runs keep
/// each task's own model, so their final scores equal the instant ones.
pub fn final_scores(tasks: &[TaskData], state: &UpstreamRunState) -> Result<Vec<ScoreRow>> {
    if state.algorithm == Algorithm::Single {
        return Ok(state.instant.clone());
    }
    let mut rows = Vec::new();
    for task in tasks {
        let obj = state.model.objective(task, RepMode::Bilevel);
        rows.extend(score_task(
            obj.as_ref(),
            state.model.values(),
            task,
            Split::Test,
        )?);
    }
    Ok(rows)
}

/// A jointly trained model: shared adapters with per-task heads, or a shared
/// generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MultitaskModel {
    /// For adapters, the head blocks of `model` are zero; task heads live in
    /// `heads`.
    pub model: Model,
    pub heads: BTreeMap<String, Vec<f64>>,
}

impl MultitaskModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.model.to_checkpoint();
        c.heads = self.heads.clone();
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        Ok(Self {
            model: Model::from_checkpoint(ckpt)?,
            heads: ckpt.heads.clone(),
        })
    }

    /// The single-task parameters used for `task_id`.
    pub fn task_params(&self, task_id: &str) -> Result<Vec<f64>> {
        match &self.model {
            Model::Hyper(g) => Ok(g.values.clone()),
            Model::Adapter(p) => {
                let head = self
                    .heads
                    .get(task_id)
                    .ok_or_else(|| Error::MissingArtifact(format!("head for task `{task_id}`")))?;
                let a = Layout::new(p.shape).adapter_len();
                let mut v = p.values[..a].to_vec();
                v.extend_from_slice(head);
                Ok(v)
            }
        }
    }

    pub fn scores(&self, tasks: &[TaskData], split: Split) -> Result<Vec<ScoreRow>> {
        let mut rows = Vec::new();
        for task in tasks {
            let obj = self.model.objective(task, RepMode::Bilevel);
            rows.extend(score_task(
                obj.as_ref(),
                &self.task_params(&task.task_id)?,
                task,
                split,
            )?);
        }
        Ok(rows)
    }
}

/// Joint training over all tasks with uniform task sampling and early
/// stopping on the mean dev F1.
pub fn multitask_train(
    inputs: &StreamInputs,
    tasks: &[TaskData],
) -> Result<(MultitaskModel, FitReport)> {
    inputs.validate()?;
    if tasks.is_empty() {
        return Err(Error::EmptyStream);
    }
    let fit_cfg = inputs.trainer.fit_config();
    let seed = derive_seed(inputs.seeds.sampler, "multitask");
    match inputs.fresh_model("init") {
        Model::Hyper(mut g) => {
            let objectives: Vec<HyperObjective> = tasks
                .iter()
                .map(|t| HyperObjective::new(g.shape, t.rep.clone(), RepMode::Bilevel))
                .collect();
            let pairs: Vec<(&dyn Objective, &TaskData)> = objectives
                .iter()
                .zip(tasks)
                .map(|(o, t)| (o as &dyn Objective, t))
                .collect();
            let report = fit(&mut g.values, &pairs, None, &fit_cfg, seed)?;
            Ok((
                MultitaskModel {
                    model: Model::Hyper(g),
                    heads: BTreeMap::new(),
                },
                report,
            ))
        }
        Model::Adapter(p) => {
            let shape = p.shape;
            let layout = Layout::new(shape);
            let (a, h) = (layout.adapter_len(), layout.head_len());
            let mut flat = p.values[..a].to_vec();
            flat.resize(MultiHeadObjective::flat_len(shape, tasks.len()), 0.0);
            let objectives: Vec<MultiHeadObjective> = (0..tasks.len())
                .map(|t| MultiHeadObjective::new(shape, tasks.len(), t))
                .collect();
            let pairs: Vec<(&dyn Objective, &TaskData)> = objectives
                .iter()
                .zip(tasks)
                .map(|(o, t)| (o as &dyn Objective, t))
                .collect();
            let report = fit(&mut flat, &pairs, None, &fit_cfg, seed)?;
            let heads = tasks
                .iter()
                .enumerate()
                .map(|(t, task)| {
                    (
                        task.task_id.clone(),
                        flat[a + t * h..a + (t + 1) * h].to_vec(),
                    )
                })
                .collect();
            let mut shared = ParamVector::zeros(shape);
            shared.values[..a].copy_from_slice(&flat[..a]);
            Ok((
                MultitaskModel {
                    model: Model::Adapter(shared),
                    heads,
                },
                report,
            ))
        }
    }
}

/// Trains a fresh model on one task and scores its test split.
pub fn single_task_train(
    inputs: &StreamInputs,
    task: &TaskData,
) -> Result<(Model, FitReport, Vec<ScoreRow>)> {
    inputs.validate()?;
    let mut model = inputs.fresh_model(&format!("init/{}", task.task_id));
    let objective = model.objective(task, RepMode::Bilevel);
    let report = fit(
        model.values_mut(),
        &[(objective.as_ref(), task)],
        None,
        &inputs.trainer.fit_config(),
        inputs.fit_seed(&task.task_id),
    )?;
    let rows = score_task(objective.as_ref(), model.values(), task, Split::Test)?;
    Ok((model, report, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{MarkerLink, SyntheticConfig};
    use crate::learners::testutil::synthetic_tasks;

    fn trainer() -> TrainerConfig {
        TrainerConfig {
            batch_size: 16,
            max_epochs: 30,
            learning_rate: 1e-2,
            ..TrainerConfig::default()
        }
    }

    fn inputs(algorithm: Algorithm, trainer: &TrainerConfig) -> StreamInputs<'_> {
        let architecture = if algorithm.supports(Architecture::Adapter) {
            Architecture::Adapter
        } else {
            Architecture::Bihnet
        };
        StreamInputs {
            algorithm,
            architecture,
            shape: NetShape::new(64, 8, 1),
            generator_hidden: 8,
            trainer,
            lambda: 0.01,
            seeds: Seeds::default(),
        }
    }

    fn auc_of(rows: &[ScoreRow], task: &str) -> f64 {
        let (s, l): (Vec<f64>, Vec<u8>) = rows
            .iter()
            .filter(|r| r.task_id == task)
            .map(|r| (r.logit, r.label))
            .unzip();
        auc_scores(&s, &l).unwrap()
    }

    fn run(inputs: &StreamInputs, tasks: &[TaskData]) -> UpstreamRunState {
        let mut state = init_state(inputs).unwrap();
        assert!(run_stream(inputs, tasks, &mut state, &mut |_| Ok(true)).unwrap());
        state
    }

    fn small(upstream: usize) -> SyntheticConfig {
        SyntheticConfig {
            upstream_tasks: upstream,
            records_per_task: 300,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn one_task_stream_instant_equals_final() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(1), 64);
        for alg in [Algorithm::Vanilla, Algorithm::BihnetReg] {
            let inp = inputs(alg, &t);
            let state = run(&inp, &tasks);
            assert_eq!(final_scores(&tasks, &state).unwrap(), state.instant);
        }
    }

    #[test]
    fn ewc_with_zero_lambda_is_vanilla() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(2), 64);
        let vanilla = run(&inputs(Algorithm::Vanilla, &t), &tasks);
        let ewc = run(
            &StreamInputs {
                lambda: 0.0,
                ..inputs(Algorithm::Ewc, &t)
            },
            &tasks,
        );
        assert_eq!(vanilla.model, ewc.model);
        assert_eq!(vanilla.instant, ewc.instant);
        assert_eq!(ewc.anchors.len(), 2);
    }

    #[test]
    fn reg_first_task_is_bihnet_vanilla() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(1), 64);
        let v = run(&inputs(Algorithm::BihnetVanilla, &t), &tasks);
        let r = run(&inputs(Algorithm::BihnetReg, &t), &tasks);
        assert_eq!(v.model, r.model);
        assert_eq!(r.memory.len(), 1);
    }

    #[test]
    fn interrupted_run_resumes_identically() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(3), 64);
        let inp = inputs(Algorithm::Ewc, &t);
        let full = run(&inp, &tasks);
        let mut state = init_state(&inp).unwrap();
        let finished =
            run_stream(&inp, &tasks, &mut state, &mut |s| Ok(s.completed.len() < 2)).unwrap();
        assert!(!finished);
        assert_eq!(state.completed.len(), 2);
        assert!(run_stream(&inp, &tasks, &mut state, &mut |_| Ok(true)).unwrap());
        assert_eq!(state, full);
    }

    #[test]
    fn conflicting_tasks_forget_under_vanilla_and_reg_helps() {
        let cfg = SyntheticConfig {
            upstream_tasks: 2,
            records_per_task: 400,
            links: vec![MarkerLink {
                task: 2,
                source: 1,
                inverted: true,
                share_topic: true,
            }],
            ..SyntheticConfig::default()
        };
        let tasks = synthetic_tasks(&cfg, 64);
        // Unlearning the first task takes a few epochs without dev-F1 gains.
        let t = TrainerConfig {
            patience: 10,
            ..trainer()
        };
        let first = &tasks[0].task_id;
        let vanilla = run(&inputs(Algorithm::Vanilla, &t), &tasks);
        let v_instant = auc_of(&vanilla.instant, first);
        let v_final = auc_of(&final_scores(&tasks, &vanilla).unwrap(), first);
        assert!(
            v_instant - v_final >= 0.1,
            "{v_instant} -> {v_final} {:?}",
            vanilla.outcomes
        );
        let reg = run(&inputs(Algorithm::BihnetReg, &t), &tasks);
        let r_final = auc_of(&final_scores(&tasks, &reg).unwrap(), first);
        assert!(r_final >= v_final, "{r_final} < {v_final}");
    }

    #[test]
    fn multitask_learns_disjoint_tasks_and_matches_single_head() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(2), 64);
        let inp = inputs(Algorithm::Multitask, &t);
        let (m, _) = multitask_train(&inp, &tasks).unwrap();
        let rows = m.scores(&tasks, Split::Test).unwrap();
        for task in &tasks {
            assert!(auc_of(&rows, &task.task_id) >= 0.95);
        }
        let (again, _) = multitask_train(&inp, &tasks).unwrap();
        assert_eq!(m, again);

        // With one task the flat vector is exactly an adapter-plus-head vector.
        let one = &tasks[..1];
        let (m1, r1) = multitask_train(&inp, one).unwrap();
        let mut p = inp.fresh_model("init");
        let obj = AdapterObjective::new(inp.shape);
        let r2 = fit(
            p.values_mut(),
            &[(&obj as &dyn Objective, &one[0])],
            None,
            &t.fit_config(),
            derive_seed(inp.seeds.sampler, "multitask"),
        )
        .unwrap();
        assert_eq!(r1, r2);
        assert_eq!(m1.task_params(&one[0].task_id).unwrap(), p.values());
    }

    #[test]
    fn single_task_is_reproducible_and_accurate() {
        let t = trainer();
        let cfg = SyntheticConfig {
            marker_strength: 1.0,
            ..small(1)
        };
        let tasks = synthetic_tasks(&cfg, 64);
        let inp = inputs(Algorithm::Single, &t);
        let (m1, _, rows1) = single_task_train(&inp, &tasks[0]).unwrap();
        let (m2, _, rows2) = single_task_train(&inp, &tasks[0]).unwrap();
        assert_eq!((m1, &rows1), (m2, &rows2));
        assert!(auc_of(&rows1, &tasks[0].task_id) >= 0.95);
        let state = run(&inp, &tasks);
        assert_eq!(state.instant, rows1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(2), 64);
        let inp = inputs(Algorithm::BihnetMultitask, &t);
        let (m, _) = multitask_train(&inp, &tasks).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = MultitaskModel::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
        let inp = inputs(Algorithm::Multitask, &t);
        let (m, _) = multitask_train(&inp, &tasks).unwrap();
        let json = serde_json::to_string(&m.to_checkpoint()).unwrap();
        let back = MultitaskModel::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_bad_pairings_and_multitask_streams() {
        let t = trainer();
        let tasks = synthetic_tasks(&small(1), 64);
        let bad = StreamInputs {
            architecture: Architecture::Bihnet,
            ..inputs(Algorithm::Vanilla, &t)
        };
        assert!(matches!(init_state(&bad), Err(Error::InvalidConfig(_))));
        let mt = inputs(Algorithm::Multitask, &t);
        let mut state = init_state(&mt).unwrap();
        assert!(run_stream(&mt, &tasks, &mut state, &mut |_| Ok(true)).is_err());
    }
}
