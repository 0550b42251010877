use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionType;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, MetricRow, SystemReport};
use crate::significance::{tukey_hsd, HsdResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ndcg,
    BertscoreF1,
    Rouge1F1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::BertscoreF1, Metric::Rouge1F1];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ndcg => "NDCG",
            Metric::BertscoreF1 => "BERTScore",
            Metric::Rouge1F1 => "ROUGE-1",
        }
    }

    /// Per-question value; errored answers have no generation scores.
    pub fn value(self, row: &MetricRow) -> Option<f64> {
        match self {
            Metric::Ndcg => row.ndcg,
            Metric::BertscoreF1 => (!row.errored).then_some(row.bertscore.f1),
            Metric::Rouge1F1 => (!row.errored).then_some(row.rouge1.f1),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One Tukey HSD over all systems for a single metric and question type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceCell {
    pub metric: Metric,
    pub qtype: QuestionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hsd: Option<HsdResult>,
    /// Why no test was run, when `hsd` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
    /// Label of the system significantly better than every other, if any.
    pub starred: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub alpha: f64,
    /// Group order of every `HsdResult`.
    pub systems: Vec<String>,
    pub cells: Vec<SignificanceCell>,
}

impl Comparison {
    pub fn cell(&self, metric: Metric, qtype: QuestionType) -> Option<&SignificanceCell> {
        self.cells.iter().find(|c| c.metric == metric && c.qtype == qtype)
    }

    pub fn is_starred(&self, metric: Metric, qtype: QuestionType, label: &str) -> bool {
        self.cell(metric, qtype)
            .and_then(|c| c.starred.as_deref())
            .is_some_and(|s| s == label)
    }

    pub fn star_count(&self) -> usize {
        self.cells.iter().filter(|c| c.starred.is_some()).count()
    }
}

/// Concatenates the systems of several reports over the same collection and
/// metric options. Repeated labels get a `#n` suffix so every group stays distinct.
pub fn merge_reports(reports: &[EvalReport]) -> Result<(EvalReport, Vec<String>)> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidArgument("no reports to merge".into()))?;
    if reports.iter().any(|r| {
        r.collection != first.collection || r.embedder != first.embedder || r.gain != first.gain
    }) {
        return Err(Error::MismatchedReports);
    }
    let systems: Vec<SystemReport> = reports.iter().flat_map(|r| r.systems.clone()).collect();
    let mut labels: Vec<String> = Vec::new();
    for s in &systems {
        let base = s.system.label();
        let seen = labels
            .iter()
            .filter(|l| **l == base || l.starts_with(&format!("{base}#")))
            .count();
        labels.push(if seen == 0 { base } else { format!("{base}#{}", seen + 1) });
    }
    Ok((
        EvalReport {
            systems,
            ..first.clone()
        },
        labels,
    ))
}

/// Tukey HSD per metric per question type across every system of the merged
/// reports, starring a system that beats all others significantly.
pub fn compare(reports: &[EvalReport], alpha: f64) -> Result<Comparison> {
    let (merged, labels) = merge_reports(reports)?;
    if merged.systems.len() < 2 {
        return Err(Error::InvalidArgument("need at least two systems to compare".into()));
    }
    let mut cells = Vec::new();
    for qtype in QuestionType::ALL {
        for metric in Metric::ALL {
            let groups: Vec<Vec<f64>> = merged
                .systems
                .iter()
                .map(|s| {
                    s.rows
                        .iter()
                        .filter(|r| r.qtype == qtype)
                        .filter_map(|r| metric.value(r))
                        .collect()
                })
                .collect();
            if groups.iter().all(Vec::is_empty) {
                continue;
            }
            let mut cell = SignificanceCell {
                metric,
                qtype,
                hsd: None,
                skipped: None,
                starred: None,
            };
            if let Some(g) = groups.iter().position(|g| g.len() < 2) {
                cell.skipped = Some(format!("{} has fewer than 2 scored questions", labels[g]));
            } else {
                let hsd = tukey_hsd(&groups, alpha)?;
                cell.starred = dominant(&hsd).map(|i| labels[i].clone());
                cell.hsd = Some(hsd);
            }
            cells.push(cell);
        }
    }
    Ok(Comparison {
        alpha,
        systems: labels,
        cells,
    })
}

/// The unique best-mean group, provided it differs significantly from every other.
fn dominant(hsd: &HsdResult) -> Option<usize> {
    let best = (0..hsd.means.len()).max_by(|&a, &b| hsd.means[a].total_cmp(&hsd.means[b]))?;
    let beats_all = (0..hsd.means.len())
        .filter(|&j| j != best)
        .all(|j| hsd.means[best] > hsd.means[j] && hsd.pair(best, j).is_some_and(|p| p.significant));
    beats_all.then_some(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generation::Pipeline;
    use crate::metrics::{aggregate, NdcgGain, Prf, SystemId};

    fn report(systems: &[(SystemId, Vec<f64>)]) -> EvalReport {
        EvalReport {
            collection: "c".into(),
            embedder: "e".into(),
            gain: NdcgGain::Linear,
            systems: systems
                .iter()
                .map(|(id, scores)| {
                    let rows = scores
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| MetricRow {
                            question_id: format!("q{i}"),
                            qtype: QuestionType::Known,
                            ndcg: Some(v),
                            rouge1: Prf::new(v, v),
                            bertscore: Prf::new(v, v),
                            answered: true,
                            errored: false,
                        })
                        .collect();
                    aggregate(rows, *id)
                })
                .collect(),
        }
    }

    fn noisy(center: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| center + 0.01 * ((i % 5) as f64 - 2.0)).collect()
    }

    #[test]
    fn self_comparison_has_no_stars() {
        let r = report(&[(SystemId::new(Pipeline::Ib, 1), noisy(0.6, 20))]);
        let c = compare(&[r.clone(), r], 0.01).unwrap();
        assert_eq!(c.systems, ["ib", "ib#2"]);
        assert_eq!(c.star_count(), 0);
        assert!(c.cells.iter().all(|cell| cell.hsd.as_ref().unwrap().pairs.iter().all(|p| !p.significant)));
    }

    #[test]
    fn dominant_system_is_starred() {
        let r = report(&[
            (SystemId::new(Pipeline::Ib, 1), noisy(0.9, 20)),
            (SystemId::new(Pipeline::RagBm25, 1), noisy(0.1, 20)),
            (SystemId::new(Pipeline::RagBm25, 3), noisy(0.12, 20)),
        ]);
        let c = compare(&[r], 0.01).unwrap();
        assert!(c.is_starred(Metric::Ndcg, QuestionType::Known, "ib"));
        assert_eq!(c.star_count(), 3);
        assert_eq!(c.cell(Metric::Ndcg, QuestionType::Known).unwrap().hsd.as_ref().unwrap().pairs.len(), 3);
        assert!(c.cell(Metric::Ndcg, QuestionType::OutOfKb).is_none());
    }

    #[test]
    fn no_star_without_a_clear_winner() {
        let r = report(&[
            (SystemId::new(Pipeline::Ib, 1), noisy(0.9, 20)),
            (SystemId::new(Pipeline::RagBm25, 1), noisy(0.9, 20)),
            (SystemId::new(Pipeline::RagBm25, 3), noisy(0.1, 20)),
        ]);
        assert_eq!(compare(&[r], 0.01).unwrap().star_count(), 0);
    }

    #[test]
    fn mismatched_collections_are_rejected() {
        let a = report(&[(SystemId::new(Pipeline::Ib, 1), noisy(0.5, 5))]);
        let mut b = a.clone();
        b.collection = "other".into();
        assert!(matches!(compare(&[a, b], 0.01), Err(Error::MismatchedReports)));
    }
}
