//! Scored, truncated passage lists and their TREC run-file representation.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::Pipeline;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub passage_id: String,
    pub score: f64,
}

/// Scores are non-increasing, ties ordered by ascending passage id, length at most `cutoff`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub question_id: String,
    pub entries: Vec<RankedPassage>,
    pub cutoff: usize,
}

impl Ranking {
    pub fn empty(question_id: impl Into<String>, cutoff: usize) -> Self {
        Self {
            question_id: question_id.into(),
            entries: Vec::new(),
            cutoff,
        }
    }

    /// Sorts candidates into ranking order and truncates to `cutoff`.
    pub fn from_scored(
        question_id: impl Into<String>,
        mut scored: Vec<RankedPassage>,
        cutoff: usize,
    ) -> Self {
        scored.sort_by(rank_order);
        scored.truncate(cutoff);
        Self {
            question_id: question_id.into(),
            entries: scored,
            cutoff,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    pub fn top_score(&self) -> Option<f64> {
        self.entries.first().map(|e| e.score)
    }
}

/// Produces the ranking a RAG pipeline generates from.
pub trait Retriever: Send + Sync {
    fn pipeline(&self) -> Pipeline;
    fn retrieve(&self, question_id: &str, query: &str, cutoff: usize) -> Result<Ranking>;
}

/// Descending score, then ascending passage id.
pub fn rank_order(a: &RankedPassage, b: &RankedPassage) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

/// One line per entry: `<qid> Q0 <passage_id> <rank> <score> <tag>`, rank from 1.
/// Scores print with six decimals so repeated runs are byte identical.
pub fn format_trec_run(rankings: &[Ranking], tag: &str) -> String {
    let mut out = String::new();
    for r in rankings {
        for (i, e) in r.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                r.question_id,
                e.passage_id,
                i + 1,
                e.score,
                tag
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrecRunLine {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

pub fn parse_trec_run(text: &str) -> Result<Vec<TrecRunLine>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: "<run>".into(),
            line: idx + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", f.len())));
        }
        out.push(TrecRunLine {
            query_id: f[0].to_string(),
            passage_id: f[2].to_string(),
            rank: f[3].parse().map_err(|_| err(format!("bad rank `{}`", f[3])))?,
            score: f[4].parse().map_err(|_| err(format!("bad score `{}`", f[4])))?,
            tag: f[5].to_string(),
        });
    }
    Ok(out)
}

/// Groups parsed run lines back into rankings, ordered by rank within each query.
pub fn rankings_from_run(lines: &[TrecRunLine], cutoff: usize) -> Vec<Ranking> {
    let mut by_query: std::collections::BTreeMap<&str, Vec<&TrecRunLine>> = Default::default();
    for l in lines {
        by_query.entry(&l.query_id).or_default().push(l);
    }
    by_query
        .into_iter()
        .map(|(qid, mut ls)| {
            ls.sort_by_key(|l| l.rank);
            Ranking {
                question_id: qid.to_string(),
                entries: ls
                    .into_iter()
                    .map(|l| RankedPassage {
                        passage_id: l.passage_id.clone(),
                        score: l.score,
                    })
                    .collect(),
                cutoff,
            }
        })
        .collect()
}
