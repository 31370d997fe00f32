use std::collections::HashMap;

use rayon::prelude::*;

use crate::corpus::{
    generate_synthetic, plan_manifest, record_key, Manifest, ManifestBuild, Phase, SyntheticConfig,
    Task, UnifiedRecord,
};
use crate::encoder::{embed, EncoderConfig};
use crate::error::{Error, Result};
use crate::hypernet::task_rep_from_embeddings;
use crate::learners::{Examples, TaskData};

/// Embedded tasks of one stream: upstream in stream order, downstream sorted
/// by task id.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    pub upstream: Vec<TaskData>,
    pub downstream: Vec<TaskData>,
}

fn task_data(
    task: &Task,
    records: &HashMap<String, UnifiedRecord>,
    vectors: &HashMap<&str, Vec<f64>>,
    encoder: &EncoderConfig,
    seed: u64,
) -> Result<TaskData> {
    let mut splits = [
        Examples::default(),
        Examples::default(),
        Examples::default(),
    ];
    for (i, ids) in [&task.train, &task.dev, &task.test].into_iter().enumerate() {
        for id in ids {
            let key = record_key(&task.dataset, id);
            let missing = || Error::MissingArtifact(format!("record `{key}`"));
            let record = records.get(&key).ok_or_else(missing)?;
            let label = *record.labels.get(&task.label).ok_or_else(|| {
                Error::MissingArtifact(format!("label `{}` of record `{key}`", task.label))
            })?;
            let x = vectors.get(key.as_str()).ok_or_else(missing)?;
            splits[i].push(id.clone(), x.clone(), label);
        }
    }
    let [train, dev, test] = splits;
    let rep = task_rep_from_embeddings(&task.task_id, &train.views(), encoder.normalize, seed)?;
    Ok(TaskData {
        task_id: task.task_id.clone(),
        train,
        dev,
        test,
        rep,
    })
}

/// Embeds every record used by `stream` and the downstream tasks.
/// `seed` drives the short task representations.
pub fn prepare_tasks(
    manifest: &Manifest,
    records: &HashMap<String, UnifiedRecord>,
    stream: &str,
    encoder: &EncoderConfig,
    seed: u64,
) -> Result<TaskSet> {
    encoder.validate()?;
    let upstream: Vec<&Task> = manifest
        .stream(stream)?
        .tasks
        .iter()
        .map(|id| {
            manifest
                .task(id)
                .ok_or_else(|| Error::MissingArtifact(format!("task `{id}` of stream `{stream}`")))
        })
        .collect::<Result<_>>()?;
    let downstream: Vec<&Task> = manifest.tasks_in(Phase::Downstream).collect();
    let mut keys: Vec<String> = upstream
        .iter()
        .chain(&downstream)
        .flat_map(|t| {
            [&t.train, &t.dev, &t.test]
                .into_iter()
                .flatten()
                .map(|id| record_key(&t.dataset, id))
        })
        .collect();
    keys.sort_unstable();
    keys.dedup();
    let vectors: HashMap<&str, Vec<f64>> = keys
        .par_iter()
        .filter_map(|k| {
            records
                .get(k)
                .map(|r| (k.as_str(), embed(&r.text, encoder).0))
        })
        .collect();
    let build = |tasks: &[&Task]| -> Result<Vec<TaskData>> {
        tasks
            .iter()
            .map(|t| task_data(t, records, &vectors, encoder, seed))
            .collect()
    };
    Ok(TaskSet {
        upstream: build(&upstream)?,
        downstream: build(&downstream)?,
    })
}

/// Loads the manifest's record files and prepares `stream`.
pub fn load_task_set(
    manifest: &Manifest,
    stream: &str,
    encoder: &EncoderConfig,
    seed: u64,
) -> Result<TaskSet> {
    let records = manifest.load_records()?;
    prepare_tasks(manifest, &records, stream, encoder, seed)
}

/// Generates a synthetic corpus and prepares it entirely in memory.
pub fn synthetic_task_set(
    cfg: &SyntheticConfig,
    build: &ManifestBuild,
    stream: &str,
    encoder: &EncoderConfig,
    seed: u64,
) -> Result<TaskSet> {
    let corpus = generate_synthetic(cfg)?;
    let (manifest, split) = plan_manifest(corpus.descriptors, corpus.records, build)?;
    let records: HashMap<String, UnifiedRecord> = split
        .into_values()
        .flatten()
        .map(|r| (r.key(), r))
        .collect();
    prepare_tasks(&manifest, &records, stream, encoder, seed)
}
