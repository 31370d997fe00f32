use std::collections::BTreeMap;

use log::info;

use super::{task_id, DatasetDescriptor, Phase, PositiveCounts, Split, Task, UnifiedRecord};

/// One task per `(dataset, label)` whose train split holds at least
/// `min_positives` positives. Tasks are returned sorted by task id with
/// phase `upstream`; see [`assign_phases`].
pub fn extract_tasks(records: &[UnifiedRecord], min_positives: usize) -> Vec<Task> {
    let mut by_task: BTreeMap<(String, String), Task> = BTreeMap::new();
    for r in records {
        let Some(split) = r.split else {
            continue;
        };
        for (label, &value) in &r.labels {
            let task = by_task
                .entry((r.dataset.clone(), label.clone()))
                .or_insert_with(|| Task {
                    task_id: task_id(&r.dataset, label),
                    dataset: r.dataset.clone(),
                    label: label.clone(),
                    phase: Phase::Upstream,
                    train: Vec::new(),
                    dev: Vec::new(),
                    test: Vec::new(),
                    positive_counts: PositiveCounts::default(),
                });
            let positive = usize::from(value == 1);
            match split {
                Split::Train => {
                    task.train.push(r.id.clone());
                    task.positive_counts.train += positive;
                }
                Split::Dev => {
                    task.dev.push(r.id.clone());
                    task.positive_counts.dev += positive;
                }
                Split::Test => {
                    task.test.push(r.id.clone());
                    task.positive_counts.test += positive;
                }
            }
        }
    }
    by_task
        .into_values()
        .filter(|t| {
            let keep = t.positive_counts.train >= min_positives;
            if !keep {
                info!(
                    "dropping {}: {} train positives < {min_positives}",
                    t.task_id, t.positive_counts.train
                );
            }
            keep
        })
        .collect()
}

/// Sets each task's phase from its dataset descriptor and per-label overrides.
pub fn assign_phases(tasks: &mut [Task], descriptors: &[DatasetDescriptor]) {
    for t in tasks {
        if let Some(d) = descriptors.iter().find(|d| d.name == t.dataset) {
            t.phase = d.phase_of(&t.label);
        }
    }
}
