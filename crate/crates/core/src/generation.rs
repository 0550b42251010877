//! Answer generation for the retrieval-augmented pipeline: prompt rendering,
//! pluggable generators, and detection of "NA" (unanswerable) outputs.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{PassageCorpus, FALLBACK_ANSWER};
use crate::error::{Error, Result};
use crate::ranking::{Ranking, Retriever};
use crate::remote::JsonClient;

/// Instruction block placed before the question and retrieved passages.
pub const RAG_PROMPT_TEMPLATE: &str = "Generate an answer to be synthesized with text-to-speech for a virtual assistant, the answer should be based on the retrieved documents for the following question. If the retrieved documents are not related to the question, then answer NA.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pipeline {
    #[serde(rename = "ib")]
    Ib,
    #[serde(rename = "rag-bm25")]
    RagBm25,
    #[serde(rename = "rag-dense")]
    RagDense,
}

impl Pipeline {
    pub const ALL: [Pipeline; 3] = [Pipeline::Ib, Pipeline::RagBm25, Pipeline::RagDense];

    pub fn as_str(self) -> &'static str {
        match self {
            Pipeline::Ib => "ib",
            Pipeline::RagBm25 => "rag-bm25",
            Pipeline::RagDense => "rag-dense",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Pipeline::Ib => "Intent-Based (IB)",
            Pipeline::RagBm25 => "RAG (BM25)",
            Pipeline::RagDense => "RAG (Dense)",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ib" => Ok(Pipeline::Ib),
            "rag-bm25" => Ok(Pipeline::RagBm25),
            "rag-dense" => Ok(Pipeline::RagDense),
            other => Err(Error::InvalidArgument(format!("unknown pipeline `{other}`"))),
        }
    }
}

/// Final system response for one question. `answered == false` iff `text` is
/// the fallback message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResult {
    pub question_id: String,
    pub pipeline: Pipeline,
    pub cutoff: usize,
    pub text: String,
    pub answered: bool,
    #[serde(rename = "source_passages")]
    pub source_passage_ids: Vec<String>,
    /// Set when a remote call failed; such answers are left out of generation metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl AnswerResult {
    pub fn fallback(question_id: &str, pipeline: Pipeline, cutoff: usize) -> Self {
        Self {
            question_id: question_id.to_string(),
            pipeline,
            cutoff,
            text: FALLBACK_ANSWER.to_string(),
            answered: false,
            source_passage_ids: Vec::new(),
            error: None,
        }
    }

    pub fn errored(question_id: &str, pipeline: Pipeline, cutoff: usize, error: &Error) -> Self {
        Self {
            error: Some(error.to_string()),
            ..Self::fallback(question_id, pipeline, cutoff)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPassage {
    pub id: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub question_id: String,
    pub text: String,
    /// Passages embedded in `text`, in rank order.
    pub passages: Vec<PromptPassage>,
}

impl Prompt {
    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.passages.iter().map(|p| p.id.as_str())
    }
}

/// Renders the template, then `Question: ...`, then `Passages:` with one
/// `- `-prefixed line per passage in rank order.
pub fn build_prompt(
    question_id: &str,
    question: &str,
    ranking: &Ranking,
    corpus: &PassageCorpus,
) -> Result<Prompt> {
    let passages = ranking
        .entries
        .iter()
        .map(|e| {
            corpus
                .get(&e.passage_id)
                .map(|p| PromptPassage {
                    id: p.id.clone(),
                    text: p.text.clone(),
                    score: e.score,
                })
                .ok_or_else(|| Error::UnknownPassage(e.passage_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut text = format!("{RAG_PROMPT_TEMPLATE}\n\nQuestion: {}\nPassages:\n", question.trim());
    for p in &passages {
        text.push_str("- ");
        text.push_str(&p.text.replace('\n', " "));
        text.push('\n');
    }
    Ok(Prompt {
        question_id: question_id.to_string(),
        text,
        passages,
    })
}

/// A chat-completion style text generator.
pub trait ChatClient: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Sends the prompt as a single user message to a chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct RemoteChatClient {
    client: JsonClient,
    pub model: Option<String>,
    pub decoding: Decoding,
}

impl RemoteChatClient {
    pub fn new(client: JsonClient, model: Option<String>, decoding: Decoding) -> Self {
        Self {
            client,
            model,
            decoding,
        }
    }
}

impl ChatClient for RemoteChatClient {
    fn id(&self) -> String {
        format!("chat:{}", self.client.config().endpoint)
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        let req = ChatRequest {
            model: self.model.as_deref(),
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.decoding.temperature,
            max_tokens: self.decoding.max_tokens,
        };
        let resp: ChatResponse = self.client.post(&req)?;
        Ok(resp
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

pub trait Generator: Send + Sync {
    fn id(&self) -> String;

    /// Raw model output. "NA" (or an empty string) means no answer.
    fn generate(&self, prompt: &Prompt) -> Result<String>;
}

/// Deterministic generator that copies retrieved text instead of calling a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractiveGenerator {
    /// Rankings whose top score falls below this emit "NA". `None` disables the check.
    pub min_score: Option<f64>,
    pub char_budget: usize,
}

impl Default for ExtractiveGenerator {
    fn default() -> Self {
        Self {
            min_score: None,
            char_budget: 1200,
        }
    }
}

impl Generator for ExtractiveGenerator {
    fn id(&self) -> String {
        "extractive".into()
    }

    fn generate(&self, prompt: &Prompt) -> Result<String> {
        let Some(top) = prompt.passages.first() else {
            return Ok("NA".into());
        };
        if matches!(self.min_score, Some(theta) if top.score < theta) {
            return Ok("NA".into());
        }
        if prompt.passages.len() == 1 {
            return Ok(top.text.clone());
        }
        let joined = prompt
            .passages
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        Ok(match joined.char_indices().nth(self.char_budget) {
            Some((cut, _)) => joined[..cut].trim_end().to_string(),
            None => joined,
        })
    }
}

pub struct ChatGenerator {
    client: Arc<dyn ChatClient>,
}

impl ChatGenerator {
    pub fn new(client: Arc<dyn ChatClient>) -> Self {
        Self { client }
    }
}

impl Generator for ChatGenerator {
    fn id(&self) -> String {
        self.client.id()
    }

    fn generate(&self, prompt: &Prompt) -> Result<String> {
        self.client.complete(&prompt.text)
    }
}

/// Recognises "no answer" outputs: `NA`, `NA` followed by punctuation, an
/// empty string, or any configured refusal pattern.
#[derive(Debug, Clone, Default)]
pub struct NaDetector {
    refusals: Vec<Regex>,
}

impl NaDetector {
    pub fn with_patterns<I, S>(patterns: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let refusals = patterns
            .into_iter()
            .map(|p| {
                Regex::new(&format!("(?i){}", p.as_ref()))
                    .map_err(|e| Error::InvalidArgument(format!("bad refusal pattern: {e}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { refusals })
    }

    pub fn is_na(&self, raw: &str) -> bool {
        let t = raw.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("na") {
            return true;
        }
        if t.len() > 2 && t.is_char_boundary(2) && t[..2].eq_ignore_ascii_case("na") {
            let rest = t[2..].trim_start();
            if rest.starts_with(|c: char| c.is_ascii_punctuation()) {
                return true;
            }
        }
        self.refusals.iter().any(|r| r.is_match(t))
    }
}

pub fn detect_na(raw: &str) -> bool {
    NaDetector::default().is_na(raw)
}

/// Retrieve, then generate. Empty rankings and NA outputs become the fallback answer.
pub fn answer_rag(
    retriever: &dyn Retriever,
    generator: &dyn Generator,
    detector: &NaDetector,
    corpus: &PassageCorpus,
    question_id: &str,
    question: &str,
    cutoff: usize,
) -> Result<(AnswerResult, Ranking)> {
    let ranking = retriever.retrieve(question_id, question, cutoff)?;
    let result = answer_from_ranking(
        generator,
        detector,
        corpus,
        retriever.pipeline(),
        question,
        &ranking,
    )?;
    Ok((result, ranking))
}

/// The generation half of [`answer_rag`], for callers that retrieve separately.
pub fn answer_from_ranking(
    generator: &dyn Generator,
    detector: &NaDetector,
    corpus: &PassageCorpus,
    pipeline: Pipeline,
    question: &str,
    ranking: &Ranking,
) -> Result<AnswerResult> {
    let question_id = ranking.question_id.as_str();
    let cutoff = ranking.cutoff;
    if ranking.is_empty() {
        return Ok(AnswerResult::fallback(question_id, pipeline, cutoff));
    }
    let prompt = build_prompt(question_id, question, ranking, corpus)?;
    let raw = generator.generate(&prompt)?;
    Ok(if detector.is_na(&raw) {
        AnswerResult::fallback(question_id, pipeline, cutoff)
    } else {
        AnswerResult {
            question_id: question_id.to_string(),
            pipeline,
            cutoff,
            text: raw.trim().to_string(),
            answered: true,
            source_passage_ids: prompt.passage_ids().map(str::to_string).collect(),
            error: None,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;
    use crate::ranking::RankedPassage;

    fn corpus() -> PassageCorpus {
        PassageCorpus::new(
            ["First passage.", "Second passage.", "Third passage."]
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("p{}", i + 1),
                    text: t.to_string(),
                    topic: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn ranking(ids: &[&str]) -> Ranking {
        Ranking {
            question_id: "q".into(),
            entries: ids
                .iter()
                .enumerate()
                .map(|(i, id)| RankedPassage {
                    passage_id: id.to_string(),
                    score: 3.0 - i as f64,
                })
                .collect(),
            cutoff: 5,
        }
    }

    struct Fixed(Ranking);

    impl Retriever for Fixed {
        fn pipeline(&self) -> Pipeline {
            Pipeline::RagBm25
        }
        fn retrieve(&self, _: &str, _: &str, cutoff: usize) -> Result<Ranking> {
            let mut r = self.0.clone();
            r.entries.truncate(cutoff);
            r.cutoff = cutoff;
            Ok(r)
        }
    }

    struct Echo(&'static str);

    impl Generator for Echo {
        fn id(&self) -> String {
            "echo".into()
        }
        fn generate(&self, _: &Prompt) -> Result<String> {
            Ok(self.0.into())
        }
    }

    #[test]
    fn prompt_layout() {
        let p = build_prompt("q", "Is it automatic?", &ranking(&["p1"]), &corpus()).unwrap();
        let expected = format!(
            "{RAG_PROMPT_TEMPLATE}\n\nQuestion: Is it automatic?\nPassages:\n- First passage.\n"
        );
        assert_eq!(p.text, expected);
        assert!(p.text.contains("then answer NA."));
    }

    #[test]
    fn prompt_preserves_rank_order() {
        let p = build_prompt("q", "x", &ranking(&["p3", "p1", "p2"]), &corpus()).unwrap();
        let a = p.text.find("Third").unwrap();
        let b = p.text.find("First").unwrap();
        let c = p.text.find("Second").unwrap();
        assert!(a < b && b < c);
        assert_eq!(p.passage_ids().collect::<Vec<_>>(), ["p3", "p1", "p2"]);
    }

    #[test]
    fn empty_ranking_prompt_has_no_passages() {
        let p = build_prompt("q", "x", &ranking(&[]), &corpus()).unwrap();
        assert!(p.text.ends_with("Passages:\n"));
        assert!(p.passages.is_empty());
    }

    #[test]
    fn unknown_passage_in_prompt_is_an_error() {
        assert!(matches!(
            build_prompt("q", "x", &ranking(&["p9"]), &corpus()),
            Err(Error::UnknownPassage(_))
        ));
    }

    #[test]
    fn extractive_rules() {
        let g = ExtractiveGenerator::default();
        let c = corpus();
        let one = build_prompt("q", "x", &ranking(&["p2"]), &c).unwrap();
        assert_eq!(g.generate(&one).unwrap(), "Second passage.");
        let none = build_prompt("q", "x", &ranking(&[]), &c).unwrap();
        assert_eq!(g.generate(&none).unwrap(), "NA");
        let two = build_prompt("q", "x", &ranking(&["p2", "p1"]), &c).unwrap();
        assert_eq!(g.generate(&two).unwrap(), "Second passage. First passage.");

        let strict = ExtractiveGenerator {
            min_score: Some(10.0),
            ..Default::default()
        };
        assert_eq!(strict.generate(&one).unwrap(), "NA");

        let short = ExtractiveGenerator {
            char_budget: 10,
            ..Default::default()
        };
        assert_eq!(short.generate(&two).unwrap(), "Second pas");
    }

    #[test]
    fn na_detection() {
        assert!(detect_na("NA"));
        assert!(detect_na(" na "));
        assert!(detect_na("NA."));
        assert!(detect_na("NA - the documents are unrelated"));
        assert!(detect_na(""));
        assert!(!detect_na("The program includes a capstone."));
        assert!(!detect_na("NASA partners with us."));
        assert!(!detect_na("Naturally, yes."));

        let d = NaDetector::with_patterns(["^i (do not|don't) know"]).unwrap();
        assert!(d.is_na("I don't know the answer"));
        assert!(!detect_na("I don't know the answer"));
    }

    #[test]
    fn rag_falls_back_on_empty_ranking() {
        let (r, ranking) = answer_rag(
            &Fixed(ranking(&[])),
            &ExtractiveGenerator::default(),
            &NaDetector::default(),
            &corpus(),
            "q",
            "x",
            3,
        )
        .unwrap();
        assert!(!r.answered);
        assert_eq!(r.text, FALLBACK_ANSWER);
        assert!(ranking.is_empty());
        assert!(r.source_passage_ids.is_empty());
    }

    #[test]
    fn rag_falls_back_on_na() {
        let (r, _) = answer_rag(
            &Fixed(ranking(&["p1"])),
            &Echo("NA."),
            &NaDetector::default(),
            &corpus(),
            "q",
            "x",
            1,
        )
        .unwrap();
        assert!(!r.answered);
        assert_eq!(r.text, FALLBACK_ANSWER);
    }

    #[test]
    fn rag_sources_are_the_prompt_passages() {
        let (r, ranking) = answer_rag(
            &Fixed(ranking(&["p1", "p2"])),
            &ExtractiveGenerator::default(),
            &NaDetector::default(),
            &corpus(),
            "q",
            "x",
            5,
        )
        .unwrap();
        assert!(r.answered);
        assert_eq!(r.source_passage_ids, ["p1", "p2"]);
        assert_eq!(ranking.len(), 2);
        assert_eq!(r.cutoff, 5);
    }

    #[test]
    fn pipeline_names_round_trip() {
        for p in Pipeline::ALL {
            assert_eq!(p.as_str().parse::<Pipeline>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert!("nope".parse::<Pipeline>().is_err());
    }
}
