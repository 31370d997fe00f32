use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ColumnMap, DatasetDescriptor, InputFormat, LabelColumn, Phase, UnifiedRecord};
use crate::error::{Error, Result};
use crate::util::rng;

/// Label name used by every synthetic dataset.
pub const SYNTH_LABEL: &str = "target";

/// Makes `task` use the marker tokens of `source`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerLink {
    pub task: usize,
    pub source: usize,
    /// Markers signal the negative class instead of the positive one.
    #[serde(default)]
    pub inverted: bool,
    /// Also borrow the source's topic words.
    #[serde(default)]
    pub share_topic: bool,
}

/// A family of one-label datasets with planted marker tokens.
///
/// Tasks are numbered from 1; the first `upstream_tasks` are upstream, the
/// rest downstream. Task `t` lives in dataset `synth{t:02}` dated Jan 1st of
/// year `2000 + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub upstream_tasks: usize,
    pub downstream_tasks: usize,
    pub records_per_task: usize,
    /// Size of the shared background vocabulary.
    pub vocab_size: usize,
    /// Background words per text.
    pub text_len: usize,
    /// Distinct topic words per task; each text carries two of them.
    pub topic_words: usize,
    /// Marker tokens inserted, all together, into a marked text.
    pub markers_per_task: usize,
    /// Probability that a text's marker follows its label.
    pub marker_strength: f64,
    pub positive_rate: f64,
    pub seed: u64,
    pub links: Vec<MarkerLink>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            upstream_tasks: 2,
            downstream_tasks: 0,
            records_per_task: 500,
            vocab_size: 200,
            text_len: 8,
            topic_words: 4,
            markers_per_task: 3,
            marker_strength: 1.0,
            positive_rate: 0.3,
            seed: 0,
            links: Vec::new(),
        }
    }
}

impl SyntheticConfig {
    /// Six upstream tasks where the last one inverts the markers of the first,
    /// plus four downstream tasks reusing the markers of upstream tasks 2-5.
    pub fn benchmark(seed: u64) -> Self {
        let mut links = vec![MarkerLink {
            task: 6,
            source: 1,
            inverted: true,
            share_topic: true,
        }];
        for (i, source) in (2..=5).enumerate() {
            links.push(MarkerLink {
                task: 7 + i,
                source,
                inverted: false,
                share_topic: false,
            });
        }
        Self {
            upstream_tasks: 6,
            downstream_tasks: 4,
            records_per_task: 600,
            marker_strength: 0.9,
            seed,
            links,
            ..Self::default()
        }
    }

    pub fn task_count(&self) -> usize {
        self.upstream_tasks + self.downstream_tasks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic: {m}")));
        if !(self.positive_rate > 0.0 && self.positive_rate < 1.0) {
            return bad("positive rate must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.marker_strength) {
            return bad("marker strength must lie in [0, 1]");
        }
        if self.task_count() == 0 || self.records_per_task == 0 {
            return bad("need at least one task and one record per task");
        }
        if self.vocab_size == 0 || self.topic_words == 0 || self.markers_per_task == 0 {
            return bad("vocabulary, topic and marker sizes must be positive");
        }
        for l in &self.links {
            let n = self.task_count();
            if l.task == 0 || l.task > n || l.source == 0 || l.source > n {
                return bad("marker link names a task outside the configured range");
            }
        }
        Ok(())
    }

    fn link(&self, task: usize) -> Option<&MarkerLink> {
        self.links.iter().rev().find(|l| l.task == task)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub descriptors: Vec<DatasetDescriptor>,
    /// Records per dataset name, without split assignments.
    pub records: BTreeMap<String, Vec<UnifiedRecord>>,
}

pub fn synth_dataset(task: usize) -> String {
    format!("synth{task:02}")
}

fn descriptor(cfg: &SyntheticConfig, task: usize) -> DatasetDescriptor {
    DatasetDescriptor {
        name: synth_dataset(task),
        source_platform: "synthetic".into(),
        reference_date: NaiveDate::from_ymd_opt(2000 + task as i32, 1, 1).expect("valid date"),
        input_format: InputFormat::Jsonl,
        column_map: ColumnMap {
            text: "text".into(),
            id: Some("id".into()),
            split: None,
            labels: vec![LabelColumn {
                name: SYNTH_LABEL.into(),
                column: SYNTH_LABEL.into(),
                positive: vec!["1".into()],
                negative: None,
                threshold: None,
            }],
            meta: vec![],
        },
        has_official_splits: false,
        raw_file: None,
        phase: if task <= cfg.upstream_tasks {
            Phase::Upstream
        } else {
            Phase::Downstream
        },
        phase_overrides: BTreeMap::new(),
        tie_rank: 0,
    }
}

/// Generates the corpus. Per record the label is drawn at `positive_rate`;
/// with probability `marker_strength` a marker token is present exactly when
/// the label is positive (negative for inverted links), otherwise its
/// presence is an independent draw at `positive_rate`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut descriptors = Vec::new();
    let mut records = BTreeMap::new();
    for task in 1..=cfg.task_count() {
        let d = descriptor(cfg, task);
        let link = cfg.link(task);
        let marker_task = link.map_or(task, |l| l.source);
        let topic_task = link.filter(|l| l.share_topic).map_or(task, |l| l.source);
        let inverted = link.is_some_and(|l| l.inverted);
        let mut r = rng(cfg.seed, &format!("synthetic/{task}"));
        let rows = (0..cfg.records_per_task)
            .map(|i| {
                let y = r.gen_bool(cfg.positive_rate);
                let marked = if r.gen_bool(cfg.marker_strength) {
                    y != inverted
                } else {
                    r.gen_bool(cfg.positive_rate)
                };
                let mut tokens: Vec<String> = (0..cfg.text_len)
                    .map(|_| format!("w{}", r.gen_range(0..cfg.vocab_size)))
                    .collect();
                for _ in 0..2 {
                    tokens.push(format!("t{topic_task}x{}", r.gen_range(0..cfg.topic_words)));
                }
                if marked {
                    tokens.extend((0..cfg.markers_per_task).map(|m| format!("m{marker_task}x{m}")));
                }
                tokens.shuffle(&mut r);
                UnifiedRecord {
                    id: format!("{i:05}"),
                    text: tokens.join(" "),
                    labels: BTreeMap::from([(SYNTH_LABEL.to_string(), u8::from(y))]),
                    split: None,
                    dataset: d.name.clone(),
                    meta: BTreeMap::new(),
                }
            })
            .collect();
        records.insert(d.name.clone(), rows);
        descriptors.push(d);
    }
    Ok(SyntheticCorpus {
        descriptors,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn positives(c: &SyntheticCorpus, dataset: &str) -> usize {
        c.records[dataset]
            .iter()
            .filter(|r| r.labels[SYNTH_LABEL] == 1)
            .count()
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig::default();
        assert_eq!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&cfg).unwrap()
        );
        let other = SyntheticConfig {
            seed: 1,
            ..cfg.clone()
        };
        assert_ne!(
            generate_synthetic(&cfg).unwrap(),
            generate_synthetic(&other).unwrap()
        );
    }

    #[test]
    fn pinned_positive_count() {
        let cfg = SyntheticConfig {
            upstream_tasks: 1,
            records_per_task: 1000,
            positive_rate: 0.1,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let c = generate_synthetic(&cfg).unwrap();
        let n = positives(&c, "synth01");
        // Binomial(1000, 0.1): mean 100, sd 9.5.
        assert!((70..=130).contains(&n));
        assert_eq!(n, PINNED_POSITIVES);
    }

    const PINNED_POSITIVES: usize = 117;

    #[test]
    fn full_strength_markers_follow_labels() {
        let cfg = SyntheticConfig::benchmark(3);
        let cfg = SyntheticConfig {
            marker_strength: 1.0,
            ..cfg
        };
        let c = generate_synthetic(&cfg).unwrap();
        for r in &c.records["synth01"] {
            assert_eq!(r.text.contains("m1x"), r.labels[SYNTH_LABEL] == 1);
        }
        // Task 6 inverts task 1's markers and shares its topic.
        for r in &c.records["synth06"] {
            assert_eq!(r.text.contains("m1x"), r.labels[SYNTH_LABEL] == 0);
            assert!(r.text.contains("t1x"));
        }
        for r in &c.records["synth07"] {
            assert_eq!(r.text.contains("m2x"), r.labels[SYNTH_LABEL] == 1);
            assert!(r.text.contains("t7x"));
        }
        assert_eq!(c.descriptors[5].phase, Phase::Upstream);
        assert_eq!(c.descriptors[6].phase, Phase::Downstream);
    }

    #[test]
    fn validation() {
        for bad in [
            SyntheticConfig {
                positive_rate: 0.0,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                marker_strength: 1.5,
                ..SyntheticConfig::default()
            },
            SyntheticConfig {
                links: vec![MarkerLink {
                    task: 9,
                    source: 1,
                    inverted: false,
                    share_topic: false,
                }],
                ..SyntheticConfig::default()
            },
        ] {
            assert!(matches!(
                generate_synthetic(&bad),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
