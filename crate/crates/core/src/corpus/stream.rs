use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;

use super::{DatasetDescriptor, OrderingPolicy, Phase, Task, TaskStream};
use crate::error::{Error, Result};
use crate::util::rng;

/// Orders the upstream tasks of a manifest.
///
/// * `chronological`: datasets ascending by `(reference_date, tie_rank, name)`,
///   tasks inside a dataset permuted by `seed`.
/// * `random`: one seeded permutation of all upstream tasks.
/// * `fixed`: `fixed_order` verbatim; it must name every upstream task once.
pub fn build_stream(
    id: &str,
    tasks: &[Task],
    descriptors: &[DatasetDescriptor],
    policy: OrderingPolicy,
    seed: u64,
    fixed_order: Option<&[String]>,
) -> Result<TaskStream> {
    let upstream: Vec<&Task> = tasks
        .iter()
        .filter(|t| t.phase == Phase::Upstream)
        .collect();
    if upstream.is_empty() {
        return Err(Error::EmptyStream);
    }
    let mut seen = HashSet::new();
    for t in &upstream {
        if !seen.insert(t.task_id.as_str()) {
            return Err(Error::DuplicateTask(t.task_id.clone()));
        }
    }
    let order: Vec<String> = match policy {
        OrderingPolicy::Chronological => {
            let mut by_dataset: BTreeMap<&str, Vec<String>> = BTreeMap::new();
            for t in &upstream {
                by_dataset
                    .entry(t.dataset.as_str())
                    .or_default()
                    .push(t.task_id.clone());
            }
            let mut datasets: Vec<&str> = by_dataset.keys().copied().collect();
            let key = |name: &str| {
                descriptors
                    .iter()
                    .find(|d| d.name == name)
                    .map(|d| (Some(d.reference_date), d.tie_rank))
                    .unwrap_or((None, u32::MAX))
            };
            for name in &datasets {
                if key(name).0.is_none() {
                    return Err(Error::InvalidConfig(format!(
                        "no descriptor (reference date) for dataset `{name}`"
                    )));
                }
            }
            datasets.sort_by(|a, b| key(a).cmp(&key(b)).then_with(|| a.cmp(b)));
            let mut out = Vec::new();
            for name in datasets {
                let mut block = by_dataset.remove(name).unwrap_or_default();
                block.sort();
                block.shuffle(&mut rng(seed, &format!("stream/{name}")));
                out.extend(block);
            }
            out
        }
        OrderingPolicy::Random => {
            let mut all: Vec<String> = upstream.iter().map(|t| t.task_id.clone()).collect();
            all.sort();
            all.shuffle(&mut rng(seed, "stream/random"));
            all
        }
        OrderingPolicy::Fixed => {
            let order = fixed_order.ok_or_else(|| {
                Error::InvalidConfig("fixed ordering policy needs an explicit order".into())
            })?;
            let mut used = HashSet::new();
            for t in order {
                if !seen.contains(t.as_str()) {
                    return Err(Error::UnknownTaskInFixedOrder(t.clone()));
                }
                if !used.insert(t.as_str()) {
                    return Err(Error::DuplicateTask(t.clone()));
                }
            }
            let missing: Vec<String> = upstream
                .iter()
                .filter(|t| !used.contains(t.task_id.as_str()))
                .map(|t| t.task_id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(Error::IncompleteFixedOrder(missing));
            }
            order.to_vec()
        }
    };
    Ok(TaskStream {
        id: id.to_string(),
        ordering_policy: policy,
        seed,
        tasks: order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ColumnMap, InputFormat, LabelColumn, PositiveCounts};

    fn task(dataset: &str, label: &str) -> Task {
        Task {
            task_id: format!("{dataset}/{label}"),
            dataset: dataset.into(),
            label: label.into(),
            phase: Phase::Upstream,
            train: vec![],
            dev: vec![],
            test: vec![],
            positive_counts: PositiveCounts::default(),
        }
    }

    fn desc(name: &str, date: &str) -> DatasetDescriptor {
        DatasetDescriptor {
            name: name.into(),
            source_platform: "x".into(),
            reference_date: date.parse().unwrap(),
            input_format: InputFormat::Csv,
            column_map: ColumnMap {
                text: "t".into(),
                id: None,
                split: None,
                labels: vec![LabelColumn {
                    name: "l".into(),
                    column: "l".into(),
                    positive: vec!["1".into()],
                    negative: None,
                    threshold: None,
                }],
                meta: vec![],
            },
            has_official_splits: false,
            raw_file: None,
            phase: Phase::Upstream,
            phase_overrides: Default::default(),
            tie_rank: 0,
        }
    }

    fn fixture() -> (Vec<Task>, Vec<DatasetDescriptor>) {
        let tasks = vec![
            task("late", "a"),
            task("late", "b"),
            task("late", "c"),
            task("early", "x"),
            task("early", "y"),
            task("early", "z"),
        ];
        (
            tasks,
            vec![desc("late", "2020-01-01"), desc("early", "2017-06-01")],
        )
    }

    #[test]
    fn chronological_blocks_by_date() {
        let (tasks, descs) = fixture();
        let s = build_stream("s", &tasks, &descs, OrderingPolicy::Chronological, 1, None).unwrap();
        assert!(s.tasks[..3].iter().all(|t| t.starts_with("early/")));
        assert!(s.tasks[3..].iter().all(|t| t.starts_with("late/")));
    }

    #[test]
    fn seeds_only_permute_within_datasets() {
        let (tasks, descs) = fixture();
        let a = build_stream("s", &tasks, &descs, OrderingPolicy::Chronological, 1, None).unwrap();
        let b = build_stream("s", &tasks, &descs, OrderingPolicy::Chronological, 1, None).unwrap();
        assert_eq!(a, b);
        let block = |s: &TaskStream| {
            s.tasks
                .iter()
                .map(|t| t.split('/').next().unwrap().to_string())
                .collect::<Vec<_>>()
        };
        let seeds: Vec<TaskStream> = (0..20)
            .map(|seed| {
                build_stream(
                    "s",
                    &tasks,
                    &descs,
                    OrderingPolicy::Chronological,
                    seed,
                    None,
                )
                .unwrap()
            })
            .collect();
        assert!(seeds.iter().all(|s| block(s) == block(&a)));
        assert!(seeds.iter().any(|s| s.tasks != a.tasks));
    }

    #[test]
    fn single_task_every_policy() {
        let tasks = vec![task("only", "t")];
        let descs = vec![desc("only", "2018-01-01")];
        for policy in [OrderingPolicy::Chronological, OrderingPolicy::Random] {
            let s = build_stream("s", &tasks, &descs, policy, 5, None).unwrap();
            assert_eq!(s.tasks, ["only/t"]);
        }
        let order = vec!["only/t".to_string()];
        let s = build_stream("s", &tasks, &descs, OrderingPolicy::Fixed, 5, Some(&order)).unwrap();
        assert_eq!(s.tasks, ["only/t"]);
    }

    #[test]
    fn fixed_order_errors() {
        let (tasks, descs) = fixture();
        let unknown = vec!["nope/t".to_string()];
        assert!(matches!(
            build_stream(
                "s",
                &tasks,
                &descs,
                OrderingPolicy::Fixed,
                0,
                Some(&unknown)
            ),
            Err(Error::UnknownTaskInFixedOrder(_))
        ));
        let dup = vec!["late/a".to_string(), "late/a".to_string()];
        assert!(matches!(
            build_stream("s", &tasks, &descs, OrderingPolicy::Fixed, 0, Some(&dup)),
            Err(Error::DuplicateTask(_))
        ));
        let partial = vec!["late/a".to_string()];
        assert!(matches!(
            build_stream(
                "s",
                &tasks,
                &descs,
                OrderingPolicy::Fixed,
                0,
                Some(&partial)
            ),
            Err(Error::IncompleteFixedOrder(_))
        ));
    }

    #[test]
    fn empty_and_downstream_only() {
        let mut t = task("d", "x");
        t.phase = Phase::Downstream;
        assert!(matches!(
            build_stream("s", &[t], &[], OrderingPolicy::Random, 0, None),
            Err(Error::EmptyStream)
        ));
    }

    #[test]
    fn tie_rank_breaks_equal_dates() {
        let tasks = vec![task("b", "x"), task("a", "x")];
        let mut da = desc("a", "2019-01-01");
        let mut db = desc("b", "2019-01-01");
        da.tie_rank = 2;
        db.tie_rank = 1;
        let s = build_stream(
            "s",
            &tasks,
            &[da, db],
            OrderingPolicy::Chronological,
            0,
            None,
        )
        .unwrap();
        assert_eq!(s.tasks, ["b/x", "a/x"]);
    }
}
