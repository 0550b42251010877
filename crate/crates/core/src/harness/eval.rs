use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::batch::{RunArtifacts, SystemEntry};
use super::config::MetricsConfig;
use crate::corpus::{QuestionType, TestCollection};
use crate::error::{Error, Result};
use crate::generation::AnswerResult;
use crate::jsonl;
use crate::metrics::{
    aggregate, bertscore_from_embeddings, ndcg, rouge1, EvalReport, MetricRow, Prf, SystemReport,
    TokenEmbedder,
};
use crate::ranking::{parse_trec_run, rankings_from_run, Ranking};
use crate::text::tokenize;

/// Scores every system in `artifacts` against `collection`.
pub fn evaluate(
    artifacts: &RunArtifacts,
    collection: &TestCollection,
    metrics: &MetricsConfig,
    embedder: &dyn TokenEmbedder,
) -> Result<EvalReport> {
    if artifacts.manifest.collection != collection.fingerprint() {
        return Err(Error::InvalidArgument(format!(
            "run artifacts in {} were produced for a different collection",
            artifacts.dir.display()
        )));
    }
    let mut systems = Vec::new();
    for entry in &artifacts.manifest.systems {
        systems.push(evaluate_system(artifacts, entry, collection, metrics, embedder)?);
    }
    Ok(EvalReport {
        collection: collection.fingerprint(),
        embedder: embedder.id(),
        gain: metrics.gain,
        systems,
    })
}

fn evaluate_system(
    artifacts: &RunArtifacts,
    entry: &SystemEntry,
    collection: &TestCollection,
    metrics: &MetricsConfig,
    embedder: &dyn TokenEmbedder,
) -> Result<SystemReport> {
    let run_path = artifacts.run_path(entry);
    let run = parse_trec_run(&jsonl::read_to_string(&run_path)?).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: run_path.clone(),
            line,
            message,
        },
        other => other,
    })?;
    let rankings: HashMap<String, Ranking> = rankings_from_run(&run, entry.system.cutoff)
        .into_iter()
        .map(|r| (r.question_id.clone(), r))
        .collect();
    let answer_list: Vec<AnswerResult> = jsonl::read_jsonl(&artifacts.answers_path(entry))?;
    let mut answers = BTreeMap::new();
    for a in answer_list {
        if collection.question(&a.question_id).is_none() {
            return Err(Error::InvalidArgument(format!(
                "answer record for unknown question `{}`",
                a.question_id
            )));
        }
        let id = a.question_id.clone();
        if answers.insert(id.clone(), a).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    if let Some(qid) = rankings.keys().find(|q| collection.question(q).is_none()) {
        return Err(Error::InvalidArgument(format!("run file ranks unknown question `{qid}`")));
    }

    let rows = collection
        .questions()
        .par_iter()
        .map(|q| {
            let answer = answers
                .get(&q.id)
                .ok_or_else(|| Error::MissingAnswer(q.id.clone()))?;
            let empty = Ranking::empty(&q.id, entry.system.cutoff);
            let ranking = rankings.get(&q.id).unwrap_or(&empty);
            score_question(q, answer, ranking, collection, metrics, embedder)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(rows, entry.system))
}

fn score_question(
    question: &crate::corpus::Question,
    answer: &AnswerResult,
    ranking: &Ranking,
    collection: &TestCollection,
    metrics: &MetricsConfig,
    embedder: &dyn TokenEmbedder,
) -> Result<MetricRow> {
    let ndcg = match question.qtype {
        QuestionType::OutOfKb => None,
        _ => Some(ndcg(
            ranking,
            &collection.qrels(&question.topic),
            ranking.cutoff,
            metrics.gain,
        )?),
    };
    let gold = collection
        .gold_answer(question)
        .ok_or_else(|| Error::DanglingReferences(vec![question.gold_answer_id.clone()]))?;
    let errored = answer.error.is_some();
    let (rouge, bert) = if errored {
        (Prf::default(), Prf::default())
    } else {
        let rouge = rouge1(&answer.text, &gold.text, &metrics.tokenizer)?;
        let cand = tokenize(&answer.text, &metrics.tokenizer);
        let reference = tokenize(&gold.text, &metrics.tokenizer);
        let bert = if cand.is_empty() || reference.is_empty() {
            Prf::default()
        } else {
            bertscore_from_embeddings(&embedder.embed_tokens(&cand)?, &embedder.embed_tokens(&reference)?)?
        };
        (rouge, bert)
    };
    Ok(MetricRow {
        question_id: question.id.clone(),
        qtype: question.qtype,
        ndcg,
        rouge1: rouge,
        bertscore: bert,
        answered: answer.answered,
        errored,
    })
}
