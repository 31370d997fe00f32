use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use super::{
    assign_phases, build_stream, extract_tasks, ingest_dataset, make_splits, read_records,
    write_records, DatasetDescriptor, OrderingPolicy, Phase, SplitRatios, SyntheticCorpus, Task,
    TaskStream, UnifiedRecord,
};
use crate::error::{Error, Result};
use crate::util::{read_json, write_json};

pub const MANIFEST_VERSION: &str = "1";

/// Stream to derive while building a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub id: String,
    pub ordering_policy: OrderingPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Explicit order for the `fixed` policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<String>>,
}

/// Options for [`build_manifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestBuild {
    /// Train-split positives an upstream task needs.
    pub min_positives: usize,
    /// Train-split positives a downstream task needs.
    pub min_downstream_positives: usize,
    pub split_ratios: SplitRatios,
    pub split_seed: u64,
    pub streams: Vec<StreamSpec>,
}

impl Default for ManifestBuild {
    fn default() -> Self {
        Self {
            min_positives: 100,
            min_downstream_positives: 1,
            split_ratios: SplitRatios::default(),
            split_seed: 0,
            streams: vec![StreamSpec {
                id: "chronological".into(),
                ordering_policy: OrderingPolicy::Chronological,
                seed: 0,
                order: None,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub datasets: Vec<DatasetDescriptor>,
    pub tasks: Vec<Task>,
    pub streams: Vec<TaskStream>,
    /// Unified record file per dataset, relative to the manifest file.
    pub record_files: BTreeMap<String, String>,
    pub min_positives: usize,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ManifestSummary {
    pub datasets: usize,
    pub upstream: usize,
    pub downstream: usize,
    pub streams: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: Manifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.task_id == id)
    }

    pub fn stream(&self, id: &str) -> Result<&TaskStream> {
        self.streams
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::InvalidConfig(format!("manifest has no stream `{id}`")))
    }

    pub fn tasks_in(&self, phase: Phase) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(move |t| t.phase == phase)
    }

    /// Every record of every dataset, keyed by `dataset/id`.
    pub fn load_records(&self) -> Result<HashMap<String, UnifiedRecord>> {
        let mut out = HashMap::new();
        for (dataset, file) in &self.record_files {
            let path = self.base_dir.join(file);
            for r in read_records(&path)? {
                if &r.dataset != dataset {
                    return Err(Error::InvalidConfig(format!(
                        "{}: record `{}` belongs to `{}`",
                        path.display(),
                        r.id,
                        r.dataset
                    )));
                }
                out.insert(r.key(), r);
            }
        }
        Ok(out)
    }

    /// Checks the structural invariants. With `check_records` the record
    /// files are read and every task's ids, splits and counts are verified.
    pub fn validate(&self, check_records: bool) -> Result<ManifestSummary> {
        let invalid = |m: String| Err(Error::InvalidConfig(m));
        if self.version != MANIFEST_VERSION {
            return invalid(format!("unsupported manifest version `{}`", self.version));
        }
        let mut names = HashSet::new();
        for d in &self.datasets {
            d.validate()?;
            if !names.insert(d.name.as_str()) {
                return invalid(format!("dataset `{}` listed twice", d.name));
            }
        }
        let mut ids = HashSet::new();
        for t in &self.tasks {
            if !ids.insert(t.task_id.as_str()) {
                return Err(Error::DuplicateTask(t.task_id.clone()));
            }
            if !names.contains(t.dataset.as_str()) {
                return invalid(format!("task `{}` names unknown dataset", t.task_id));
            }
            let train: HashSet<&String> = t.train.iter().collect();
            let dev: HashSet<&String> = t.dev.iter().collect();
            if t.test
                .iter()
                .any(|id| train.contains(id) || dev.contains(id))
                || t.dev.iter().any(|id| train.contains(id))
            {
                return invalid(format!("task `{}` has overlapping splits", t.task_id));
            }
            if t.phase == Phase::Upstream && t.positive_counts.train < self.min_positives {
                return invalid(format!(
                    "upstream task `{}` has {} train positives (< {})",
                    t.task_id, t.positive_counts.train, self.min_positives
                ));
            }
        }
        for s in &self.streams {
            let mut seen = HashSet::new();
            for id in &s.tasks {
                match self.task(id) {
                    None => return Err(Error::UnknownTaskInFixedOrder(id.clone())),
                    Some(t) if t.phase != Phase::Upstream => {
                        return invalid(format!(
                            "stream `{}` contains downstream task `{id}`",
                            s.id
                        ))
                    }
                    _ => {}
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::DuplicateTask(id.clone()));
                }
            }
            let missing: Vec<String> = self
                .tasks_in(Phase::Upstream)
                .filter(|t| !seen.contains(t.task_id.as_str()))
                .map(|t| t.task_id.clone())
                .collect();
            if !missing.is_empty() {
                return Err(Error::IncompleteFixedOrder(missing));
            }
        }
        if check_records {
            self.check_records()?;
        }
        Ok(ManifestSummary {
            datasets: self.datasets.len(),
            upstream: self.tasks_in(Phase::Upstream).count(),
            downstream: self.tasks_in(Phase::Downstream).count(),
            streams: self.streams.len(),
        })
    }

    fn check_records(&self) -> Result<()> {
        let records = self.load_records()?;
        for t in &self.tasks {
            for split in [super::Split::Train, super::Split::Dev, super::Split::Test] {
                let mut positives = 0;
                for id in t.ids(split) {
                    let r = records
                        .get(&super::record_key(&t.dataset, id))
                        .ok_or_else(|| {
                            Error::MissingArtifact(format!("record `{id}` of task `{}`", t.task_id))
                        })?;
                    if r.split != Some(split) {
                        return Err(Error::InvalidConfig(format!(
                            "record `{id}` of `{}` is not in the {split:?} split",
                            t.task_id
                        )));
                    }
                    positives += usize::from(r.labels.get(&t.label) == Some(&1));
                }
                let stored = match split {
                    super::Split::Train => t.positive_counts.train,
                    super::Split::Dev => t.positive_counts.dev,
                    super::Split::Test => t.positive_counts.test,
                };
                if stored != positives {
                    return Err(Error::InvalidConfig(format!(
                        "task `{}` records {stored} {split:?} positives, files hold {positives}",
                        t.task_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Splits, expands and orders already-ingested datasets without touching the
/// file system. Returns the manifest (with an empty `base_dir`) and the split
/// records per dataset.
pub fn plan_manifest(
    descriptors: Vec<DatasetDescriptor>,
    records: BTreeMap<String, Vec<UnifiedRecord>>,
    build: &ManifestBuild,
) -> Result<(Manifest, BTreeMap<String, Vec<UnifiedRecord>>)> {
    let mut tasks = Vec::new();
    let mut record_files = BTreeMap::new();
    let mut split_records = BTreeMap::new();
    for (name, rows) in records {
        let rows = make_splits(rows, build.split_ratios, build.split_seed)?;
        record_files.insert(name.clone(), format!("records/{name}.jsonl"));
        let floor = build.min_positives.min(build.min_downstream_positives);
        tasks.extend(extract_tasks(&rows, floor));
        split_records.insert(name, rows);
    }
    assign_phases(&mut tasks, &descriptors);
    tasks.retain(|t| match t.phase {
        Phase::Upstream => t.positive_counts.train >= build.min_positives,
        Phase::Downstream => t.positive_counts.train >= build.min_downstream_positives,
    });
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    let streams = build
        .streams
        .iter()
        .map(|s| {
            build_stream(
                &s.id,
                &tasks,
                &descriptors,
                s.ordering_policy,
                s.seed,
                s.order.as_deref(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        version: MANIFEST_VERSION.into(),
        datasets: descriptors,
        tasks,
        streams,
        record_files,
        min_positives: build.min_positives,
        base_dir: PathBuf::new(),
    };
    info!(
        "manifest: {} upstream, {} downstream tasks",
        manifest.tasks_in(Phase::Upstream).count(),
        manifest.tasks_in(Phase::Downstream).count()
    );
    Ok((manifest, split_records))
}

/// [`plan_manifest`], then writes one unified record file per dataset under
/// `out_dir/records/`.
pub fn assemble_manifest(
    descriptors: Vec<DatasetDescriptor>,
    records: BTreeMap<String, Vec<UnifiedRecord>>,
    build: &ManifestBuild,
    out_dir: &Path,
) -> Result<Manifest> {
    let (mut manifest, split) = plan_manifest(descriptors, records, build)?;
    for (name, rows) in &split {
        write_records(&out_dir.join(&manifest.record_files[name]), rows)?;
    }
    manifest.base_dir = out_dir.to_path_buf();
    Ok(manifest)
}

/// Ingests every descriptor's raw file from `data_dir` and assembles a
/// manifest in `out_dir`.
pub fn build_manifest(
    descriptors: Vec<DatasetDescriptor>,
    data_dir: &Path,
    build: &ManifestBuild,
    out_dir: &Path,
) -> Result<Manifest> {
    let mut records = BTreeMap::new();
    for d in &descriptors {
        let file = d.raw_file.clone().unwrap_or_else(|| {
            let ext = serde_json::to_value(d.input_format)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            format!("{}.{ext}", d.name)
        });
        records.insert(d.name.clone(), ingest_dataset(d, &data_dir.join(file))?);
    }
    assemble_manifest(descriptors, records, build, out_dir)
}

impl SyntheticCorpus {
    pub fn manifest(self, build: &ManifestBuild, out_dir: &Path) -> Result<Manifest> {
        assemble_manifest(self.descriptors, self.records, build, out_dir)
    }
}

/// Reads every `*.json` descriptor in a directory, sorted by file name.
pub fn load_descriptors(dir: &Path) -> Result<Vec<DatasetDescriptor>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}
