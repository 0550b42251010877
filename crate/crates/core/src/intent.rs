//! Intent-based answering: one intent per FAQ entry, trained on the canonical
//! question plus selected paraphrases, matched by TF-IDF cosine similarity
//! against a confidence threshold. Unmatched utterances get the fallback answer.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{QuestionType, TestCollection, FALLBACK_ANSWER};
use crate::error::{Error, Result};
use crate::generation::{AnswerResult, ChatClient, Pipeline};
use crate::jsonl::{read_jsonl, read_to_string, write_jsonl};
use crate::ranking::{RankedPassage, Ranking};
use crate::text::{tokenize, TokenizerConfig};

/// Whole-word, case-sensitive acronym expansion.
#[derive(Debug, Clone, Default)]
pub struct AcronymMap {
    map: BTreeMap<String, String>,
    pattern: Option<Regex>,
}

impl AcronymMap {
    /// Rejects maps whose expansions contain a key, which would break idempotence.
    pub fn new(map: BTreeMap<String, String>) -> Result<Self> {
        if map.is_empty() {
            return Ok(Self::default());
        }
        let alternation = map
            .keys()
            .map(|k| regex::escape(k))
            .collect::<Vec<_>>()
            .join("|");
        let pattern = Regex::new(&format!(r"\b(?:{alternation})\b"))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for (k, v) in &map {
            if pattern.is_match(v) {
                return Err(Error::InvalidArgument(format!(
                    "expansion of `{k}` contains an acronym: `{v}`"
                )));
            }
        }
        Ok(Self {
            map,
            pattern: Some(pattern),
        })
    }

    /// Reads a JSON object of acronym to expansion.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let map: BTreeMap<String, String> = serde_json::from_str(&read_to_string(path.as_ref())?)?;
        Self::new(map)
    }

    pub fn normalize(&self, text: &str) -> String {
        match &self.pattern {
            Some(re) => re
                .replace_all(text, |caps: &regex::Captures<'_>| self.map[&caps[0]].clone())
                .into_owned(),
            None => text.to_string(),
        }
    }
}

pub fn normalize_acronyms(text: &str, acronyms: &AcronymMap) -> String {
    acronyms.normalize(text)
}

fn number_word(n: usize) -> String {
    const WORDS: [&str; 11] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    ];
    WORDS.get(n).map_or_else(|| n.to_string(), |w| w.to_string())
}

pub fn paraphrase_prompt(question: &str, max_n: usize) -> String {
    format!(
        "generate up to {} paraphrases of the following question: {}",
        number_word(max_n),
        question.trim()
    )
}

/// Strips list markers and wrapping quotes from one line of model output.
fn clean_line(line: &str) -> &str {
    let mut s = line.trim();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && s[digits..].starts_with(['.', ')', ':']) {
        s = s[digits + 1..].trim_start();
    }
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = s.strip_prefix(bullet) {
            s = rest.trim_start();
        }
    }
    s.trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}')
        .trim()
}

/// Parses model output into at most `max_n` distinct variations, dropping
/// blanks, case-insensitive duplicates and copies of the input question.
pub fn parse_paraphrases(output: &str, question: &str, max_n: usize) -> Vec<String> {
    let input = question.trim().to_lowercase();
    let mut seen = BTreeSet::new();
    output
        .lines()
        .map(clean_line)
        .filter(|l| !l.is_empty())
        .filter(|l| {
            let folded = l.to_lowercase();
            folded != input && seen.insert(folded)
        })
        .take(max_n)
        .map(str::to_string)
        .collect()
}

pub fn generate_paraphrases(
    client: &dyn ChatClient,
    question: &str,
    max_n: usize,
) -> Result<Vec<String>> {
    let output = client.complete(&paraphrase_prompt(question, max_n))?;
    Ok(parse_paraphrases(&output, question, max_n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub keep: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            keep: 5,
            min_tokens: 3,
            max_tokens: 40,
        }
    }
}

/// Keeps the first `keep` variations whose token count is within bounds and
/// that differ from the canonical question after acronym normalization.
pub fn select_variations(
    canonical: &str,
    variations: &[String],
    config: &SelectionConfig,
    acronyms: &AcronymMap,
) -> Vec<String> {
    let tok = TokenizerConfig::default();
    let canonical_tokens = tokenize(&acronyms.normalize(canonical), &tok);
    variations
        .iter()
        .filter(|v| {
            let tokens = tokenize(&acronyms.normalize(v), &tok);
            (config.min_tokens..=config.max_tokens).contains(&tokens.len())
                && tokens != canonical_tokens
        })
        .take(config.keep)
        .cloned()
        .collect()
}

/// One line of a paraphrase file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphraseRecord {
    pub topic: String,
    pub question: String,
    pub variations: Vec<String>,
}

pub fn load_paraphrases(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    let records: Vec<ParaphraseRecord> = read_jsonl(path.as_ref())?;
    Ok(records.into_iter().map(|r| (r.topic, r.variations)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub id: String,
    pub utterances: Vec<String>,
    pub response_text: String,
    pub response_passage_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntentConfig {
    /// Minimum cosine similarity for a match, in [0, 1].
    pub threshold: f64,
    pub selection: SelectionConfig,
    pub fallback_text: String,
}

impl Default for IntentConfig {
    fn default() -> Self {
        Self {
            threshold: 0.35,
            selection: SelectionConfig::default(),
            fallback_text: FALLBACK_ANSWER.to_string(),
        }
    }
}

type SparseVec = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct IntentDecision {
    pub matched: Option<String>,
    pub confidence: f64,
}

/// Immutable once built.
#[derive(Debug, Clone)]
pub struct IntentModel {
    intents: Vec<Intent>,
    threshold: f64,
    fallback_text: String,
    acronyms: AcronymMap,
    tokenizer: TokenizerConfig,
    idf: BTreeMap<String, f64>,
    unseen_idf: f64,
    /// (intent index, tf-idf vector, squared norm) per training utterance.
    utterances: Vec<(usize, SparseVec, f64)>,
}

impl IntentModel {
    pub fn from_intents(intents: Vec<Intent>, config: &IntentConfig, acronyms: AcronymMap) -> Result<Self> {
        if intents.is_empty() {
            return Err(Error::InvalidArgument("intent model needs at least one intent".into()));
        }
        if !(0.0..=1.0).contains(&config.threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be in [0, 1], got {}",
                config.threshold
            )));
        }
        let mut ids = BTreeSet::new();
        for intent in &intents {
            if !ids.insert(intent.id.as_str()) {
                return Err(Error::DuplicateId(intent.id.clone()));
            }
            if intent.utterances.is_empty() {
                return Err(Error::InvalidArgument(format!("intent `{}` has no utterances", intent.id)));
            }
        }

        let tokenizer = TokenizerConfig::default();
        let docs: Vec<(usize, Vec<String>)> = intents
            .iter()
            .enumerate()
            .flat_map(|(i, intent)| {
                intent
                    .utterances
                    .iter()
                    .map(|u| (i, tokenize(&acronyms.normalize(u), &tokenizer)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let n = docs.len() as f64;
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, tokens) in &docs {
            for t in tokens.iter().map(String::as_str).collect::<BTreeSet<_>>() {
                *df.entry(t).or_default() += 1;
            }
        }
        // Smoothed idf, positive for every term including unseen ones.
        let idf: BTreeMap<String, f64> = df
            .into_iter()
            .map(|(t, d)| (t.to_string(), ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .collect();
        let unseen_idf = (1.0 + n).ln() + 1.0;

        let mut model = Self {
            intents,
            threshold: config.threshold,
            fallback_text: config.fallback_text.clone(),
            acronyms,
            tokenizer,
            idf,
            unseen_idf,
            utterances: Vec::new(),
        };
        model.utterances = docs
            .into_iter()
            .map(|(i, tokens)| {
                let v = model.vectorize(&tokens);
                let norm = sq_norm(&v);
                (i, v, norm)
            })
            .collect();
        Ok(model)
    }

    fn vectorize(&self, tokens: &[String]) -> SparseVec {
        let mut v = SparseVec::new();
        for t in tokens {
            *v.entry(t.clone()).or_default() += 1.0;
        }
        for (t, w) in v.iter_mut() {
            *w *= self.idf.get(t).copied().unwrap_or(self.unseen_idf);
        }
        v
    }

    pub fn intents(&self) -> &[Intent] {
        &self.intents
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn fallback_text(&self) -> &str {
        &self.fallback_text
    }

    /// Same model with a different threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!("threshold must be in [0, 1], got {threshold}")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    /// Highest similarity to any training utterance; ties go to the smaller intent id.
    pub fn classify(&self, utterance: &str) -> IntentDecision {
        let tokens = tokenize(&self.acronyms.normalize(utterance), &self.tokenizer);
        let query = self.vectorize(&tokens);
        let qnorm = sq_norm(&query);
        let mut best: Option<(f64, &str)> = None;
        for (i, v, norm) in &self.utterances {
            let sim = if qnorm == 0.0 || *norm == 0.0 {
                0.0
            } else {
                (sparse_dot(&query, v) / (qnorm * norm).sqrt()).clamp(0.0, 1.0)
            };
            let id = self.intents[*i].id.as_str();
            best = match best {
                Some((b, bid)) if b > sim || (b == sim && bid <= id) => Some((b, bid)),
                _ => Some((sim, id)),
            };
        }
        let (confidence, id) = best.unwrap_or((0.0, ""));
        IntentDecision {
            matched: (confidence >= self.threshold && !id.is_empty()).then(|| id.to_string()),
            confidence,
        }
    }

    pub fn intent(&self, id: &str) -> Option<&Intent> {
        self.intents.iter().find(|i| i.id == id)
    }

    /// One JSON object per intent per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), self.intents.iter())
    }

    pub fn load(path: impl AsRef<Path>, config: &IntentConfig, acronyms: AcronymMap) -> Result<Self> {
        Self::from_intents(read_jsonl(path.as_ref())?, config, acronyms)
    }
}

fn sq_norm(v: &SparseVec) -> f64 {
    v.values().map(|x| x * x).sum()
}

fn sparse_dot(a: &SparseVec, b: &SparseVec) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small
        .iter()
        .filter_map(|(t, x)| large.get(t).map(|y| x * y))
        .sum()
}

/// Builds one intent per Known topic. The topic's first question (in file
/// order) is the canonical utterance, followed by the selected variations.
pub fn build_intent_model(
    collection: &TestCollection,
    variations: &BTreeMap<String, Vec<String>>,
    config: &IntentConfig,
    acronyms: AcronymMap,
) -> Result<IntentModel> {
    let mut intents = Vec::new();
    for topic in collection.topics(QuestionType::Known) {
        let canonical = collection
            .questions()
            .iter()
            .find(|q| q.topic == topic)
            .expect("topic comes from the question list");
        let answer = collection.gold_answer(canonical).ok_or_else(|| {
            Error::InvalidArgument(format!("topic `{topic}` has no gold answer"))
        })?;
        let passage = answer.source_passage_ids.first().ok_or_else(|| {
            Error::InvalidArgument(format!("gold answer of topic `{topic}` has no source passage"))
        })?;
        let extra = variations.get(topic).map(Vec::as_slice).unwrap_or_default();
        let mut utterances = vec![acronyms.normalize(&canonical.text)];
        utterances.extend(
            select_variations(&canonical.text, extra, &config.selection, &acronyms)
                .iter()
                .map(|v| acronyms.normalize(v)),
        );
        intents.push(Intent {
            id: topic.to_string(),
            utterances,
            response_text: answer.text.clone(),
            response_passage_id: passage.clone(),
        });
    }
    if intents.is_empty() {
        return Err(Error::InvalidArgument("collection has no known topics".into()));
    }
    IntentModel::from_intents(intents, config, acronyms)
}

/// Matched: the intent's fixed response and a one-passage ranking.
/// Fallback: the fallback message and an empty ranking.
pub fn answer_ib(model: &IntentModel, question_id: &str, question: &str) -> (AnswerResult, Ranking) {
    let decision = model.classify(question);
    match decision.matched.as_deref().and_then(|id| model.intent(id)) {
        Some(intent) => (
            AnswerResult {
                question_id: question_id.to_string(),
                pipeline: Pipeline::Ib,
                cutoff: 1,
                text: intent.response_text.clone(),
                answered: true,
                source_passage_ids: vec![intent.response_passage_id.clone()],
                error: None,
            },
            Ranking {
                question_id: question_id.to_string(),
                entries: vec![RankedPassage {
                    passage_id: intent.response_passage_id.clone(),
                    score: decision.confidence,
                }],
                cutoff: 1,
            },
        ),
        None => {
            let mut result = AnswerResult::fallback(question_id, Pipeline::Ib, 1);
            result.text = model.fallback_text.clone();
            (result, Ranking::empty(question_id, 1))
        }
    }
}
