//! Retrieval and generation effectiveness measures, and their per-question-type
//! aggregation into an evaluation report.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::QuestionType;
use crate::dense::{cosine, EmbeddingProvider, EmbeddingVector, HashedNGramProvider};
use crate::error::{Error, Result};
use crate::generation::{AnswerResult, Pipeline};
use crate::ranking::Ranking;
use crate::text::{tokenize, TokenizerConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NdcgGain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade − 1
    Exponential,
}

impl NdcgGain {
    fn gain(self, grade: u8) -> f64 {
        match self {
            NdcgGain::Linear => f64::from(grade),
            NdcgGain::Exponential => 2f64.powi(i32::from(grade)) - 1.0,
        }
    }
}

/// DCG@k / IDCG@k with discount 1/log2(rank + 1), ranks from 1.
///
/// Fails with [`Error::UndefinedTopic`] when no passage has a positive grade,
/// since the ideal DCG is then zero.
pub fn ndcg(
    ranking: &Ranking,
    qrels: &BTreeMap<String, u8>,
    cutoff: usize,
    gain: NdcgGain,
) -> Result<f64> {
    if !qrels.values().any(|&g| g > 0) {
        return Err(Error::UndefinedTopic(ranking.question_id.clone()));
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranking
        .entries
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, e)| gain.gain(qrels.get(&e.passage_id).copied().unwrap_or(0)) * discount(i))
        .sum();
    let mut ideal: Vec<u8> = qrels.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| gain.gain(g) * discount(i))
        .sum();
    Ok(dcg / idcg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Unigram overlap with clipped counts. An empty candidate scores zero.
pub fn rouge1(candidate: &str, reference: &str, tokenizer: &TokenizerConfig) -> Result<Prf> {
    let reference = tokenize(reference, tokenizer);
    if reference.is_empty() {
        return Err(Error::InvalidArgument("ROUGE-1 reference is empty".into()));
    }
    let candidate = tokenize(candidate, tokenizer);
    if candidate.is_empty() {
        return Ok(Prf::default());
    }
    let mut ref_counts: HashMap<&str, usize> = HashMap::new();
    for t in &reference {
        *ref_counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in &candidate {
        if let Some(c) = ref_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    Ok(Prf::new(
        overlap as f64 / candidate.len() as f64,
        overlap as f64 / reference.len() as f64,
    ))
}

/// Embeds individual tokens for BERTScore.
pub trait TokenEmbedder: Send + Sync {
    fn id(&self) -> String;
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>>;
}

#[derive(Debug, Clone, Default)]
pub struct HashedTokenEmbedder(pub HashedNGramProvider);

impl TokenEmbedder for HashedTokenEmbedder {
    fn id(&self) -> String {
        self.0.id()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(tokens.iter().map(|t| self.0.embed_token(t)).collect())
    }
}

/// Sends each token as one text to an embedding endpoint.
pub struct ProviderTokenEmbedder<P>(pub P);

impl<P: EmbeddingProvider> TokenEmbedder for ProviderTokenEmbedder<P> {
    fn id(&self) -> String {
        self.0.id()
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<EmbeddingVector>> {
        crate::dense::embed(&self.0, tokens)
    }
}

/// Greedy cosine matching with no idf weighting and no baseline rescaling.
pub fn bertscore_from_embeddings(candidate: &[EmbeddingVector], reference: &[EmbeddingVector]) -> Result<Prf> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::InvalidArgument("BERTScore needs non-empty texts".into()));
    }
    let sim: Vec<Vec<f64>> = candidate
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let precision = sim
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / candidate.len() as f64;
    let recall = (0..reference.len())
        .map(|j| sim.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(Prf::new(precision, recall))
}

pub fn bertscore(
    candidate: &str,
    reference: &str,
    embedder: &dyn TokenEmbedder,
    tokenizer: &TokenizerConfig,
) -> Result<Prf> {
    let c = tokenize(candidate, tokenizer);
    let r = tokenize(reference, tokenizer);
    if c.is_empty() || r.is_empty() {
        return Err(Error::InvalidArgument("BERTScore needs non-empty texts".into()));
    }
    bertscore_from_embeddings(&embedder.embed_tokens(&c)?, &embedder.embed_tokens(&r)?)
}

/// Percentage of results that declined to answer.
pub fn unanswered_rate<'a, I>(results: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a AnswerResult>,
{
    let (mut total, mut unanswered) = (0usize, 0usize);
    for r in results {
        total += 1;
        if !r.answered {
            unanswered += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no results to compute an unanswered rate over".into()));
    }
    Ok(100.0 * unanswered as f64 / total as f64)
}

/// One pipeline at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SystemId {
    pub pipeline: Pipeline,
    pub cutoff: usize,
}

impl SystemId {
    pub fn new(pipeline: Pipeline, cutoff: usize) -> Self {
        Self { pipeline, cutoff }
    }

    pub fn label(&self) -> String {
        match self.pipeline {
            Pipeline::Ib => "ib".into(),
            p => format!("{p}@{}", self.cutoff),
        }
    }
}

impl fmt::Display for SystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub question_id: String,
    pub qtype: QuestionType,
    /// Absent for out-of-KB questions.
    pub ndcg: Option<f64>,
    pub rouge1: Prf,
    pub bertscore: Prf,
    pub answered: bool,
    #[serde(default)]
    pub errored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAggregate {
    pub count: usize,
    pub failures: usize,
    pub ndcg: Option<f64>,
    pub bertscore: Option<Prf>,
    pub rouge1: Option<Prf>,
    /// Reported for out-of-KB questions only.
    pub unanswered_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub system: SystemId,
    pub by_type: BTreeMap<QuestionType, TypeAggregate>,
    pub rows: Vec<MetricRow>,
}

impl SystemReport {
    pub fn get(&self, qtype: QuestionType) -> Option<&TypeAggregate> {
        self.by_type.get(&qtype)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub collection: String,
    pub embedder: String,
    pub gain: NdcgGain,
    pub systems: Vec<SystemReport>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn mean_prf<'a>(rows: impl Iterator<Item = &'a Prf> + Clone) -> Option<Prf> {
    Some(Prf {
        precision: mean(rows.clone().map(|p| p.precision))?,
        recall: mean(rows.clone().map(|p| p.recall))?,
        f1: mean(rows.map(|p| p.f1))?,
    })
}

/// Arithmetic means per question type. Errored rows count as failures and are
/// left out of the generation metrics and the unanswered rate.
pub fn aggregate(rows: Vec<MetricRow>, system: SystemId) -> SystemReport {
    let mut by_type = BTreeMap::new();
    for qtype in QuestionType::ALL {
        let of_type: Vec<&MetricRow> = rows.iter().filter(|r| r.qtype == qtype).collect();
        if of_type.is_empty() {
            continue;
        }
        let ok: Vec<&MetricRow> = of_type.iter().copied().filter(|r| !r.errored).collect();
        let unanswered_pct = (qtype == QuestionType::OutOfKb && !ok.is_empty()).then(|| {
            100.0 * ok.iter().filter(|r| !r.answered).count() as f64 / ok.len() as f64
        });
        by_type.insert(
            qtype,
            TypeAggregate {
                count: of_type.len(),
                failures: of_type.len() - ok.len(),
                ndcg: mean(of_type.iter().filter_map(|r| r.ndcg)),
                bertscore: mean_prf(ok.iter().map(|r| &r.bertscore)),
                rouge1: mean_prf(ok.iter().map(|r| &r.rouge1)),
                unanswered_pct,
            },
        );
    }
    SystemReport {
        system,
        by_type,
        rows,
    }
}
