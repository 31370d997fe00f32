//! Dataset harmonisation: unified records, label-to-task expansion, splits and
//! ordered upstream task streams.

mod ingest;
mod manifest;
mod splits;
mod stream;
mod synthetic;
mod tasks;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest_dataset, read_records, write_records};
pub use manifest::{
    assemble_manifest, build_manifest, load_descriptors, plan_manifest, Manifest, ManifestBuild,
    ManifestSummary, StreamSpec, MANIFEST_VERSION,
};
pub use splits::{make_splits, SplitRatios};
pub use stream::build_stream;
pub use synthetic::{
    generate_synthetic, synth_dataset, MarkerLink, SyntheticConfig, SyntheticCorpus, SYNTH_LABEL,
};
pub use tasks::{assign_phases, extract_tasks};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(raw: &str) -> Option<Split> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "train" | "training" => Some(Split::Train),
            "dev" | "val" | "valid" | "validation" => Some(Split::Dev),
            "test" | "testing" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One text with its binary annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedRecord {
    pub id: String,
    pub text: String,
    pub labels: BTreeMap<String, u8>,
    pub split: Option<Split>,
    pub dataset: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl UnifiedRecord {
    /// Key that is unique across datasets.
    pub fn key(&self) -> String {
        record_key(&self.dataset, &self.id)
    }
}

pub fn record_key(dataset: &str, id: &str) -> String {
    format!("{dataset}/{id}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
    Tsv,
}

/// Maps one raw column to a binary label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelColumn {
    /// Label name used in unified records and task ids.
    pub name: String,
    pub column: String,
    /// Raw values that mean "positive".
    #[serde(default)]
    pub positive: Vec<String>,
    /// Raw values that mean "negative". When absent every other non-empty
    /// value is negative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative: Option<Vec<String>>,
    /// Numeric cut-off: values `>= threshold` are positive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl LabelColumn {
    pub fn binarize(&self, row: usize, raw: &str) -> Result<u8> {
        let value = raw.trim();
        if value.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: format!("empty value for label `{}`", self.name),
            });
        }
        let unmappable = || Error::UnmappableLabelValue {
            row,
            label: self.name.clone(),
            value: value.to_string(),
        };
        if let Some(t) = self.threshold {
            let x: f64 = value.parse().map_err(|_| unmappable())?;
            return Ok(u8::from(x >= t));
        }
        if self.positive.iter().any(|p| p == value) {
            return Ok(1);
        }
        match &self.negative {
            Some(neg) if neg.iter().any(|n| n == value) => Ok(0),
            Some(_) => Err(unmappable()),
            None => Ok(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    /// Column holding the official split, when the dataset ships one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub labels: Vec<LabelColumn>,
    /// Columns copied verbatim into `meta`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub meta: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Upstream,
    Downstream,
}

fn upstream() -> Phase {
    Phase::Upstream
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub source_platform: String,
    /// Earliest publication date of the data.
    pub reference_date: NaiveDate,
    pub input_format: InputFormat,
    pub column_map: ColumnMap,
    pub has_official_splits: bool,
    /// Raw file name, relative to the data directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_file: Option<String>,
    #[serde(default = "upstream")]
    pub phase: Phase,
    /// Per-label phase overrides.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub phase_overrides: BTreeMap<String, Phase>,
    /// Breaks ties between datasets sharing a reference date (lower first).
    #[serde(default)]
    pub tie_rank: u32,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.column_map.labels.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "descriptor `{}` maps no label columns",
                self.name
            )));
        }
        for l in &self.column_map.labels {
            if l.threshold.is_none() && l.positive.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "label `{}` of `{}` has neither positive values nor a threshold",
                    l.name, self.name
                )));
            }
        }
        Ok(())
    }

    pub fn phase_of(&self, label: &str) -> Phase {
        self.phase_overrides
            .get(label)
            .copied()
            .unwrap_or(self.phase)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveCounts {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
}

/// One `(dataset, label)` binary task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub dataset: String,
    pub label: String,
    pub phase: Phase,
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub positive_counts: PositiveCounts,
}

impl Task {
    pub fn ids(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

pub fn task_id(dataset: &str, label: &str) -> String {
    format!("{dataset}/{label}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderingPolicy {
    Chronological,
    Random,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStream {
    pub id: String,
    pub ordering_policy: OrderingPolicy,
    pub seed: u64,
    pub tasks: Vec<String>,
}
