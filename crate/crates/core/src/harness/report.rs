use std::collections::BTreeMap;

use super::run::RunArtifact;
use crate::error::{Error, Result};
use crate::metrics::{
    delta, render_tables, Delta, Measure, Metric, MetricReport, Protocol, ReportRow, Table,
};

/// Decimals used for every number in a rendered report.
pub const REPORT_DECIMALS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    /// One report per input, with deltas filled in where a reference was named.
    pub reports: Vec<MetricReport>,
    pub tables: Vec<Table>,
}

impl RenderedReport {
    pub fn markdown(&self) -> String {
        self.tables
            .iter()
            .map(|t| format!("### {}\n\n{}", t.title, t.to_markdown()))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// All tables in one CSV stream, each preceded by a `# title` line.
    pub fn csv(&self) -> String {
        self.tables
            .iter()
            .map(|t| format!("# {}\n{}", t.title, t.to_csv()))
            .collect()
    }
}

/// Renders reports that are already computed. `references` maps a run id to
/// the run id its delta columns are measured against; both must be among
/// `reports`.
pub fn render_metric_reports(
    mut reports: Vec<MetricReport>,
    references: &BTreeMap<String, String>,
) -> Result<RenderedReport> {
    let index: BTreeMap<String, usize> = reports
        .iter()
        .enumerate()
        .map(|(i, r)| (r.run_id.clone(), i))
        .collect();
    let lookup = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| Error::MissingArtifact(format!("report for run `{id}`")))
    };
    let mut pairs = Vec::new();
    for (run, reference) in references {
        pairs.push((lookup(run)?, lookup(reference)?));
    }
    for &(i, j) in &pairs {
        let reference = reports[j].clone();
        let mut protocols = vec![Protocol::Instant, Protocol::Final];
        protocols.extend(reports[i].fewshot.keys().map(|&k| Protocol::Fewshot(k)));
        for protocol in protocols {
            let metric = Metric::new(protocol, Measure::Auc);
            if reports[i].get(metric).is_none() || reference.get(metric).is_none() {
                continue;
            }
            let value = delta(&reports[i], &reference, metric)?;
            reports[i].deltas.insert(
                metric.key(),
                Delta {
                    value,
                    reference: reference.run_id.clone(),
                },
            );
        }
    }
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow {
            report: r,
            reference: references.get(&r.run_id).map(|id| &reports[index[id]]),
        })
        .collect();
    let tables = render_tables(&rows, REPORT_DECIMALS)?;
    Ok(RenderedReport { reports, tables })
}

/// Reports of finished runs, rendered from their score files.
pub fn render_report(
    artifacts: &[RunArtifact],
    references: &BTreeMap<String, String>,
) -> Result<RenderedReport> {
    let reports = artifacts
        .iter()
        .map(RunArtifact::report)
        .collect::<Result<Vec<_>>>()?;
    render_metric_reports(reports, references)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::TaskMetrics;

    fn report(id: &str, tasks: &[(&str, f64)]) -> MetricReport {
        let mut r = MetricReport::new(id, id);
        for &(t, auc) in tasks {
            let m = TaskMetrics { auc, f1: 0.5 };
            r.instant.insert(t.into(), m);
            r.final_.insert(t.into(), m);
        }
        r.finish();
        r
    }

    #[test]
    fn no_reference_means_no_delta_columns() {
        let out =
            render_metric_reports(vec![report("a", &[("t", 0.8)])], &BTreeMap::new()).unwrap();
        assert!(out
            .tables
            .iter()
            .all(|t| !t.header.iter().any(|h| h.starts_with('Δ'))));
        assert!(out.markdown().contains("0.800000"));
        assert!(out.reports[0].deltas.is_empty());
    }

    #[test]
    fn deltas_are_recorded_and_rendered() {
        let refs = BTreeMap::from([("b".to_string(), "a".to_string())]);
        let out = render_metric_reports(
            vec![report("a", &[("t", 0.8)]), report("b", &[("t", 0.85)])],
            &refs,
        )
        .unwrap();
        let d = &out.reports[1].deltas["instant_auc"];
        assert_eq!(d.reference, "a");
        assert!((d.value - 0.05).abs() < 1e-12);
        let instant = out.tables.iter().find(|t| t.title == "instant").unwrap();
        assert_eq!(instant.rows[1][3], "+0.050000");
        assert!(out.csv().contains("# instant\n"));
    }

    #[test]
    fn coverage_mismatch_names_missing_tasks() {
        let refs = BTreeMap::from([("b".to_string(), "a".to_string())]);
        let err = render_metric_reports(
            vec![
                report("a", &[("t", 0.8), ("u", 0.7)]),
                report("b", &[("t", 0.85)]),
            ],
            &refs,
        )
        .unwrap_err();
        match err {
            Error::CoverageMismatch { missing } => assert_eq!(missing, vec!["u".to_string()]),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn unknown_reference_is_an_error() {
        let refs = BTreeMap::from([("a".to_string(), "zzz".to_string())]);
        let err = render_metric_reports(vec![report("a", &[("t", 0.8)])], &refs).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)));
    }
}
