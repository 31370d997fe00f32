//! AUC and F1, the instant/final/few-shot aggregates and delta columns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::neural::sigmoid;

/// Logits and labels of one task split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub task_id: String,
    pub split: Split,
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(task_id: &str, split: Split, scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dims(scores.len(), labels.len()));
        }
        Ok(Self {
            task_id: task_id.into(),
            split,
            scores,
            labels,
        })
    }
}

/// One line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task_id: String,
    pub split: Split,
    pub record_id: String,
    pub logit: f64,
    pub label: u8,
}

/// Rank AUC with average ranks for ties.
pub fn auc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dims(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

pub fn auc(set: &ScoredSet) -> Result<f64> {
    auc_scores(&set.scores, &set.labels)
}

/// Positive-class F1 with `sigmoid(score) >= threshold` as the prediction.
pub fn f1_scores(scores: &[f64], labels: &[u8], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let predicted = sigmoid(s) >= threshold;
        match (predicted, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1_counts(tp, fp, fn_)
}

pub fn f1_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn f1(set: &ScoredSet, threshold: f64) -> f64 {
    f1_scores(&set.scores, &set.labels, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub auc: f64,
    pub f1: f64,
}

impl TaskMetrics {
    pub fn from_set(set: &ScoredSet) -> Result<Self> {
        Ok(Self {
            auc: auc(set)?,
            f1: f1(set, 0.5),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    Instant,
    Final,
    Fewshot(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Measure {
    Auc,
    F1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Metric {
    pub protocol: Protocol,
    pub measure: Measure,
}

impl Metric {
    pub const fn new(protocol: Protocol, measure: Measure) -> Self {
        Self { protocol, measure }
    }

    /// `instant_auc`, `final_f1`, `fewshot_k16_auc`, ...
    pub fn key(&self) -> String {
        let p = match self.protocol {
            Protocol::Instant => "instant".to_string(),
            Protocol::Final => "final".to_string(),
            Protocol::Fewshot(k) => format!("fewshot_k{k}"),
        };
        let m = match self.measure {
            Measure::Auc => "auc",
            Measure::F1 => "f1",
        };
        format!("{p}_{m}")
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown metric `{s}`"));
        let (p, m) = s.rsplit_once('_').ok_or_else(bad)?;
        let measure = match m {
            "auc" => Measure::Auc,
            "f1" => Measure::F1,
            _ => return Err(bad()),
        };
        let protocol = match p {
            "instant" => Protocol::Instant,
            "final" => Protocol::Final,
            _ => Protocol::Fewshot(
                p.strip_prefix("fewshot_k")
                    .and_then(|k| k.parse().ok())
                    .ok_or_else(bad)?,
            ),
        };
        Ok(Metric::new(protocol, measure))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub value: f64,
    pub reference: String,
}

/// Per-task metrics of one run with their means and any deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub model: String,
    pub instant: BTreeMap<String, TaskMetrics>,
    #[serde(rename = "final")]
    pub final_: BTreeMap<String, TaskMetrics>,
    pub fewshot: BTreeMap<usize, BTreeMap<String, TaskMetrics>>,
    pub aggregates: BTreeMap<String, f64>,
    #[serde(default)]
    pub deltas: BTreeMap<String, Delta>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    pub fn new(run_id: &str, model: &str) -> Self {
        Self {
            run_id: run_id.into(),
            model: model.into(),
            instant: BTreeMap::new(),
            final_: BTreeMap::new(),
            fewshot: BTreeMap::new(),
            aggregates: BTreeMap::new(),
            deltas: BTreeMap::new(),
        }
    }

    /// A report that only carries already-averaged values, stored as a single
    /// pseudo-task named `mean`.
    pub fn from_means(model: &str, means: &[(Metric, f64)]) -> Self {
        let mut r = Self::new(model, model);
        for &(metric, value) in means {
            let slot = r
                .column_mut(metric.protocol)
                .entry("mean".into())
                .or_insert(TaskMetrics {
                    auc: f64::NAN,
                    f1: f64::NAN,
                });
            match metric.measure {
                Measure::Auc => slot.auc = value,
                Measure::F1 => slot.f1 = value,
            }
        }
        r.finish();
        r
    }

    pub fn column(&self, protocol: Protocol) -> Option<&BTreeMap<String, TaskMetrics>> {
        match protocol {
            Protocol::Instant => Some(&self.instant),
            Protocol::Final => Some(&self.final_),
            Protocol::Fewshot(k) => self.fewshot.get(&k),
        }
    }

    fn column_mut(&mut self, protocol: Protocol) -> &mut BTreeMap<String, TaskMetrics> {
        match protocol {
            Protocol::Instant => &mut self.instant,
            Protocol::Final => &mut self.final_,
            Protocol::Fewshot(k) => self.fewshot.entry(k).or_default(),
        }
    }

    fn protocols(&self) -> Vec<Protocol> {
        let mut out = vec![Protocol::Instant, Protocol::Final];
        out.extend(self.fewshot.keys().map(|&k| Protocol::Fewshot(k)));
        out
    }

    /// Recomputes every aggregate as the plain mean of its per-task column.
    pub fn finish(&mut self) {
        let mut aggregates = BTreeMap::new();
        for protocol in self.protocols() {
            let Some(col) = self.column(protocol) else {
                continue;
            };
            for measure in [Measure::Auc, Measure::F1] {
                let values = col.values().map(|m| match measure {
                    Measure::Auc => m.auc,
                    Measure::F1 => m.f1,
                });
                if let Some(v) = mean(values).filter(|v| !v.is_nan()) {
                    aggregates.insert(Metric::new(protocol, measure).key(), v);
                }
            }
        }
        self.aggregates = aggregates;
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.aggregates.get(&metric.key()).copied()
    }

    fn tasks(&self, protocol: Protocol) -> BTreeSet<&String> {
        self.column(protocol)
            .map(|c| c.keys().collect())
            .unwrap_or_default()
    }
}

/// `report − reference` for one aggregate. Both must cover the same tasks.
pub fn delta(report: &MetricReport, reference: &MetricReport, metric: Metric) -> Result<f64> {
    let (a, b) = (
        report.tasks(metric.protocol),
        reference.tasks(metric.protocol),
    );
    if a != b || a.is_empty() {
        let missing: Vec<String> = a.symmetric_difference(&b).map(|s| s.to_string()).collect();
        return Err(Error::CoverageMismatch { missing });
    }
    let value = |r: &MetricReport| {
        r.get(metric)
            .ok_or_else(|| Error::MissingArtifact(format!("{} of `{}`", metric.key(), r.run_id)))
    };
    Ok(value(report)? - value(reference)?)
}

/// Score rows of a run, grouped by protocol.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunScores {
    pub instant: Vec<ScoreRow>,
    pub final_: Vec<ScoreRow>,
    pub fewshot: BTreeMap<usize, Vec<ScoreRow>>,
}

fn group(rows: &[ScoreRow]) -> Result<BTreeMap<String, TaskMetrics>> {
    let mut sets: BTreeMap<&str, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for r in rows {
        let e = sets.entry(&r.task_id).or_default();
        e.0.push(r.logit);
        e.1.push(r.label);
    }
    sets.into_iter()
        .map(|(task, (scores, labels))| {
            let set = ScoredSet::new(task, Split::Test, scores, labels)?;
            Ok((task.to_string(), TaskMetrics::from_set(&set)?))
        })
        .collect()
}

/// Builds the report of one run from its score rows. Every task in
/// `expected_instant` and `expected_final` must have rows.
pub fn aggregate(
    run_id: &str,
    model: &str,
    expected_instant: &[String],
    expected_final: &[String],
    scores: &RunScores,
) -> Result<MetricReport> {
    let mut report = MetricReport::new(run_id, model);
    report.instant = group(&scores.instant)?;
    report.final_ = group(&scores.final_)?;
    for (name, expected, col) in [
        ("instant", expected_instant, &report.instant),
        ("final", expected_final, &report.final_),
    ] {
        if let Some(t) = expected.iter().find(|t| !col.contains_key(*t)) {
            return Err(Error::MissingArtifact(format!(
                "{name} record for task `{t}`"
            )));
        }
    }
    for (&k, rows) in &scores.fewshot {
        report.fewshot.insert(k, group(rows)?);
    }
    report.finish();
    Ok(report)
}

/// One line of a rendered table: a report and its optional delta reference.
#[derive(Debug, Clone, Copy)]
pub struct ReportRow<'a> {
    pub report: &'a MetricReport,
    pub reference: Option<&'a MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| {} |", self.header.join(" | "));
        let rule: Vec<&str> = (0..self.header.len())
            .map(|i| if i == 0 { " --- " } else { " ---: " })
            .collect();
        let _ = writeln!(out, "|{}|", rule.join("|"));
        for r in &self.rows {
            let _ = writeln!(out, "| {} |", r.join(" | "));
        }
        out
    }
}

fn fmt(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.decimals$}"))
}

/// Renders the few-shot (one per `k`), final and instant tables. Each table
/// has a delta column on its AUC when at least one row names a reference;
/// rows lacking the table's protocol are left out.
pub fn render_tables(rows: &[ReportRow<'_>], decimals: usize) -> Result<Vec<Table>> {
    let mut ks: BTreeSet<usize> = BTreeSet::new();
    for r in rows {
        ks.extend(r.report.fewshot.keys());
    }
    let mut specs: Vec<(String, Protocol, &str, bool)> = ks
        .iter()
        .map(|&k| {
            (
                format!("fewshot-k{k}"),
                Protocol::Fewshot(k),
                "Fewshot",
                true,
            )
        })
        .collect();
    specs.push(("final".into(), Protocol::Final, "Final", false));
    specs.push(("instant".into(), Protocol::Instant, "Instant", true));

    let any_reference = rows.iter().any(|r| r.reference.is_some());
    let mut tables = Vec::new();
    for (title, protocol, label, with_delta) in specs {
        let with_delta = with_delta && any_reference;
        let mut header = vec![
            "model".to_string(),
            format!("{label}-F1"),
            format!("{label}-AUC"),
        ];
        if with_delta {
            header.push(format!("Δ {label}-AUC"));
        }
        let auc = Metric::new(protocol, Measure::Auc);
        let f1 = Metric::new(protocol, Measure::F1);
        let mut body = Vec::new();
        for r in rows {
            if r.report.get(auc).is_none() {
                continue;
            }
            let mut line = vec![
                r.report.model.clone(),
                fmt(r.report.get(f1), decimals),
                fmt(r.report.get(auc), decimals),
            ];
            if with_delta {
                line.push(match r.reference {
                    Some(reference) => {
                        format!("{:+.decimals$}", delta(r.report, reference, auc)?)
                    }
                    None => "-".into(),
                });
            }
            body.push(line);
        }
        if !body.is_empty() {
            tables.push(Table {
                title,
                header,
                rows: body,
            });
        }
    }
    Ok(tables)
}
