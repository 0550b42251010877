use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::compare::{compare, merge_reports, Comparison, Metric};
use crate::corpus::QuestionType;
use crate::error::{Error, Result};
use crate::generation::Pipeline;
use crate::jsonl;
use crate::metrics::{EvalReport, SystemReport, TypeAggregate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            other => Err(Error::InvalidArgument(format!("unknown format `{other}`"))),
        }
    }
}

/// Evaluation results plus, when more than one system is present, the
/// significance analysis that decides the stars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub eval: EvalReport,
    /// Row labels, parallel to `eval.systems`.
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

impl Report {
    /// Merges `reports` and runs the significance tests when there are at least two systems.
    pub fn build(reports: &[EvalReport], alpha: f64) -> Result<Self> {
        let (eval, labels) = merge_reports(reports)?;
        let comparison = if eval.systems.len() >= 2 {
            Some(compare(reports, alpha)?)
        } else {
            None
        };
        Ok(Self {
            eval,
            labels,
            comparison,
        })
    }

    fn starred(&self, metric: Metric, qtype: QuestionType, label: &str) -> bool {
        self.comparison
            .as_ref()
            .is_some_and(|c| c.is_starred(metric, qtype, label))
    }
}

const SYSTEM_WIDTH: usize = 24;
const CELL_WIDTH: usize = 11;

fn columns(qtype: QuestionType) -> &'static [Option<Metric>] {
    // `None` is the unanswered percentage.
    match qtype {
        QuestionType::OutOfKb => &[Some(Metric::BertscoreF1), Some(Metric::Rouge1F1), None],
        _ => &[Some(Metric::Ndcg), Some(Metric::BertscoreF1), Some(Metric::Rouge1F1)],
    }
}

fn row_name(system: &SystemReport, label: &str) -> String {
    let mut name = match system.system.pipeline {
        Pipeline::Ib => system.system.pipeline.display_name().to_string(),
        p => format!("{} k={}", p.display_name(), system.system.cutoff),
    };
    if let Some((_, n)) = label.split_once('#') {
        let _ = write!(name, " #{n}");
    }
    name
}

fn metric_value(agg: &TypeAggregate, metric: Metric) -> Option<f64> {
    match metric {
        Metric::Ndcg => agg.ndcg,
        Metric::BertscoreF1 => agg.bertscore.map(|p| p.f1),
        Metric::Rouge1F1 => agg.rouge1.map(|p| p.f1),
    }
}

/// Plain-text table: one row per system, one column group per question type,
/// `*` after values of a system significantly better than all others.
pub fn render_table(report: &Report) -> String {
    let mut counts = [0usize; 3];
    for s in &report.eval.systems {
        for (i, q) in QuestionType::ALL.iter().enumerate() {
            counts[i] = counts[i].max(s.get(*q).map_or(0, |a| a.count));
        }
    }
    let group_width = CELL_WIDTH * 3;
    let mut out = String::new();
    let _ = write!(out, "{:SYSTEM_WIDTH$}", "");
    for (i, q) in QuestionType::ALL.iter().enumerate() {
        let title = format!("{} ({} Questions)", q.label(), counts[i]);
        let _ = write!(out, "| {title:group_width$}");
    }
    out.push('\n');
    let _ = write!(out, "{:SYSTEM_WIDTH$}", "System");
    for q in QuestionType::ALL {
        out.push_str("| ");
        for col in columns(q) {
            let name = col.map_or("%Unans.", Metric::name);
            let _ = write!(out, "{name:CELL_WIDTH$}");
        }
    }
    out.push('\n');
    let rule_len = out.lines().map(str::len).max().unwrap_or(0);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');

    for (system, label) in report.eval.systems.iter().zip(&report.labels) {
        let _ = write!(out, "{:SYSTEM_WIDTH$}", row_name(system, label));
        for q in QuestionType::ALL {
            out.push_str("| ");
            let agg = system.get(q);
            for col in columns(q) {
                let cell = match (agg, col) {
                    (Some(a), Some(m)) => metric_value(a, *m).map(|v| {
                        let star = if report.starred(*m, q, label) { "*" } else { "" };
                        format!("{v:.4}{star}")
                    }),
                    (Some(a), None) => a.unanswered_pct.map(|v| format!("{v:.1}")),
                    (None, _) => None,
                };
                let cell = cell.unwrap_or_else(|| "-".into());
                let _ = write!(out, "{cell:CELL_WIDTH$}");
            }
        }
        out.push('\n');
    }
    if let Some(c) = &report.comparison {
        let _ = writeln!(
            out,
            "\n* significantly better than every other system (Tukey HSD, alpha = {}); BERTScore embedder: {}",
            c.alpha, report.eval.embedder
        );
    }
    out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
}

pub fn render(report: &Report, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)? + "\n",
        ReportFormat::Table => render_table(report),
    })
}

pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<()> {
    jsonl::write_string(path, &render(report, format)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aggregate, MetricRow, NdcgGain, Prf, SystemId};

    fn rows(center: f64) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for (qtype, n) in [(QuestionType::Known, 8), (QuestionType::Inferred, 4), (QuestionType::OutOfKb, 4)] {
            for i in 0..n {
                let v = center + 0.01 * (i % 3) as f64;
                out.push(MetricRow {
                    question_id: format!("{qtype:?}{i}"),
                    qtype,
                    ndcg: (qtype != QuestionType::OutOfKb).then_some(v),
                    rouge1: Prf::new(v, v),
                    bertscore: Prf::new(v, v),
                    answered: i % 2 == 0,
                    errored: false,
                });
            }
        }
        out
    }

    fn eval(systems: &[(Pipeline, usize, f64)]) -> EvalReport {
        EvalReport {
            collection: "c".into(),
            embedder: "hashed-ngram-256".into(),
            gain: NdcgGain::Linear,
            systems: systems
                .iter()
                .map(|&(p, k, c)| aggregate(rows(c), SystemId::new(p, k)))
                .collect(),
        }
    }

    #[test]
    fn table_has_three_groups_and_stars() {
        let e = eval(&[(Pipeline::Ib, 1, 0.9), (Pipeline::RagBm25, 1, 0.2), (Pipeline::RagBm25, 3, 0.21)]);
        let report = Report::build(&[e], 0.01).unwrap();
        let table = render_table(&report);
        let header = table.lines().next().unwrap();
        assert_eq!(header.matches("Questions)").count(), 3);
        assert!(header.contains("Known (8 Questions)"));
        assert!(header.contains("Out of KB (4 Questions)"));
        let ib_line = table.lines().find(|l| l.starts_with("Intent-Based")).unwrap();
        assert!(ib_line.contains('*'));
        let bm25 = table.lines().find(|l| l.starts_with("RAG (BM25) k=1")).unwrap();
        assert!(!bm25.contains('*'));
    }

    #[test]
    fn table_values_match_json_to_printed_precision() {
        let e = eval(&[(Pipeline::Ib, 1, 0.9), (Pipeline::RagDense, 5, 0.3)]);
        let report = Report::build(&[e], 0.01).unwrap();
        let json = render(&report, ReportFormat::Json).unwrap();
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        let table = render_table(&back);
        for (system, line) in back.eval.systems.iter().zip(table.lines().skip(3)) {
            let cells: Vec<f64> = line
                .split('|')
                .skip(1)
                .flat_map(|g| g.split_whitespace().map(|c| c.trim_end_matches('*').parse::<f64>().unwrap()).collect::<Vec<_>>())
                .collect();
            let k = system.get(QuestionType::Known).unwrap();
            let o = system.get(QuestionType::OutOfKb).unwrap();
            assert!((cells[0] - k.ndcg.unwrap()).abs() <= 5e-5);
            assert!((cells[2] - k.rouge1.unwrap().f1).abs() <= 5e-5);
            assert!((cells[8] - o.unanswered_pct.unwrap()).abs() <= 0.05);
        }
    }

    #[test]
    fn single_system_has_no_comparison() {
        let report = Report::build(&[eval(&[(Pipeline::Ib, 1, 0.5)])], 0.01).unwrap();
        assert!(report.comparison.is_none());
        assert!(!render_table(&report).contains('*'));
    }

    #[test]
    fn format_names() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!("csv".parse::<ReportFormat>().is_err());
    }
}
