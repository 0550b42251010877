//! Knowledge base and test collection: passages, questions, gold answers and
//! graded relevance judgments.
//!
//! Judgments are keyed by topic. Every variation of a question shares its
//! topic and therefore its judgments.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::jsonl::{read_jsonl, read_to_string, write_jsonl, write_string};

/// Response given whenever the system has no answer.
pub const FALLBACK_ANSWER: &str = "I'm sorry, I don't have an answer.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic: Option<String>,
}

/// An ordered, id-unique collection of passages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PassageCorpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
}

impl PassageCorpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { passages, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Known,
    Inferred,
    OutOfKb,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [Self::Known, Self::Inferred, Self::OutOfKb];

    pub fn label(self) -> &'static str {
        match self {
            Self::Known => "Known",
            Self::Inferred => "Inferred",
            Self::OutOfKb => "Out of KB",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
    #[serde(rename = "type")]
    pub qtype: QuestionType,
    pub topic: String,
    pub gold_answer_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub id: String,
    pub text: String,
    #[serde(rename = "source_passages", default)]
    pub source_passage_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub topic: String,
    pub passage_id: String,
    pub grade: u8,
}

/// Paths of the four files that make up a test collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectionPaths {
    pub corpus: PathBuf,
    pub questions: PathBuf,
    pub answers: PathBuf,
    pub qrels: PathBuf,
}

impl CollectionPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            corpus: dir.join("passages.jsonl"),
            questions: dir.join("questions.jsonl"),
            answers: dir.join("answers.jsonl"),
            qrels: dir.join("qrels.txt"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub known: usize,
    pub inferred: usize,
    pub out_of_kb: usize,
}

impl TypeCounts {
    pub fn get(&self, qtype: QuestionType) -> usize {
        match qtype {
            QuestionType::Known => self.known,
            QuestionType::Inferred => self.inferred,
            QuestionType::OutOfKb => self.out_of_kb,
        }
    }

    pub fn total(&self) -> usize {
        self.known + self.inferred + self.out_of_kb
    }
}

/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TestCollection {
    passages: PassageCorpus,
    questions: Vec<Question>,
    gold_answers: BTreeMap<String, GoldAnswer>,
    judgments: Vec<RelevanceJudgment>,
    qrels: BTreeMap<String, BTreeMap<String, u8>>,
}

impl TestCollection {
    /// Assembles a collection without checking invariants; see [`TestCollection::validate`].
    pub fn from_parts(
        passages: PassageCorpus,
        questions: Vec<Question>,
        gold_answers: Vec<GoldAnswer>,
        judgments: Vec<RelevanceJudgment>,
    ) -> Self {
        let mut qrels: BTreeMap<String, BTreeMap<String, u8>> = BTreeMap::new();
        for j in &judgments {
            qrels
                .entry(j.topic.clone())
                .or_default()
                .entry(j.passage_id.clone())
                .or_insert(j.grade);
        }
        Self {
            passages,
            questions,
            gold_answers: gold_answers
                .into_iter()
                .map(|a| (a.id.clone(), a))
                .collect(),
            judgments,
            qrels,
        }
    }

    pub fn passages(&self) -> &PassageCorpus {
        &self.passages
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn gold_answers(&self) -> &BTreeMap<String, GoldAnswer> {
        &self.gold_answers
    }

    pub fn gold_answer(&self, question: &Question) -> Option<&GoldAnswer> {
        self.gold_answers.get(&question.gold_answer_id)
    }

    pub fn judgments(&self) -> &[RelevanceJudgment] {
        &self.judgments
    }

    /// Graded judgments for a topic, passage id to grade. Empty when unjudged.
    pub fn qrels(&self, topic: &str) -> BTreeMap<String, u8> {
        self.qrels.get(topic).cloned().unwrap_or_default()
    }

    pub fn type_counts(&self) -> TypeCounts {
        let mut c = TypeCounts::default();
        for q in &self.questions {
            match q.qtype {
                QuestionType::Known => c.known += 1,
                QuestionType::Inferred => c.inferred += 1,
                QuestionType::OutOfKb => c.out_of_kb += 1,
            }
        }
        c
    }

    /// Topics of the given type in first-appearance order.
    pub fn topics(&self, qtype: QuestionType) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.questions
            .iter()
            .filter(|q| q.qtype == qtype && seen.insert(q.topic.as_str()))
            .map(|q| q.topic.as_str())
            .collect()
    }

    /// Content hash used to check that two reports describe the same collection.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in self.passages.iter() {
            h.update(p.id.as_bytes());
            h.update([0]);
            h.update(p.text.as_bytes());
            h.update([1]);
        }
        for q in &self.questions {
            h.update(q.id.as_bytes());
            h.update([0]);
            h.update(q.text.as_bytes());
            h.update([0]);
            h.update(q.topic.as_bytes());
            h.update([1]);
        }
        for a in self.gold_answers.values() {
            h.update(a.id.as_bytes());
            h.update([0]);
            h.update(a.text.as_bytes());
            h.update([1]);
        }
        for j in &self.judgments {
            h.update(format!("{} {} {}\n", j.topic, j.passage_id, j.grade).as_bytes());
        }
        hex::encode(&h.finalize()[..12])
    }

    pub fn validate(&self) -> ValidationReport {
        self.validate_with_fallback(FALLBACK_ANSWER)
    }

    /// Checks every collection invariant. Violations are collected, never raised.
    pub fn validate_with_fallback(&self, fallback: &str) -> ValidationReport {
        let mut report = ValidationReport::default();

        for p in self.passages.iter() {
            if p.text.trim().is_empty() {
                report.push(ViolationKind::EmptyPassage, &p.id, "passage text is empty");
            }
        }

        let mut question_ids = BTreeSet::new();
        let mut topic_types: BTreeMap<&str, QuestionType> = BTreeMap::new();
        for q in &self.questions {
            if !question_ids.insert(q.id.as_str()) {
                report.push(ViolationKind::DuplicateId, &q.id, "question id is not unique");
            }
            if !self.gold_answers.contains_key(&q.gold_answer_id) {
                report.push(
                    ViolationKind::DanglingReference,
                    &q.id,
                    format!("gold answer `{}` does not exist", q.gold_answer_id),
                );
            }
            match topic_types.get(q.topic.as_str()) {
                Some(&t) if t != q.qtype => report.push(
                    ViolationKind::MixedTopicType,
                    &q.topic,
                    format!("question `{}` is {} but the topic is {}", q.id, q.qtype, t),
                ),
                Some(_) => {}
                None => {
                    topic_types.insert(&q.topic, q.qtype);
                }
            }
            if let Some(answer) = self.gold_answers.get(&q.gold_answer_id) {
                self.check_answer_shape(q, answer, fallback, &mut report);
            }
        }

        for a in self.gold_answers.values() {
            for pid in &a.source_passage_ids {
                if !self.passages.contains(pid) {
                    report.push(
                        ViolationKind::DanglingReference,
                        &a.id,
                        format!("source passage `{pid}` does not exist"),
                    );
                }
            }
        }

        let mut pairs = BTreeSet::new();
        for j in &self.judgments {
            if j.grade > 2 {
                report.push(
                    ViolationKind::InvalidGrade,
                    &j.topic,
                    format!("grade {} for `{}` is outside 0..=2", j.grade, j.passage_id),
                );
            }
            if !pairs.insert((j.topic.as_str(), j.passage_id.as_str())) {
                report.push(
                    ViolationKind::DuplicateJudgment,
                    &j.topic,
                    format!("passage `{}` is judged more than once", j.passage_id),
                );
            }
            if !self.passages.contains(&j.passage_id) {
                report.push(
                    ViolationKind::DanglingReference,
                    &j.topic,
                    format!("judged passage `{}` does not exist", j.passage_id),
                );
            }
            if !topic_types.contains_key(j.topic.as_str()) {
                report.push(
                    ViolationKind::DanglingReference,
                    &j.topic,
                    "judged topic has no questions",
                );
            }
        }

        for (topic, qtype) in &topic_types {
            let grades = self.qrels.get(*topic);
            let max = grades.and_then(|g| g.values().copied().max()).unwrap_or(0);
            match qtype {
                QuestionType::OutOfKb if max > 0 => report.push(
                    ViolationKind::OutOfKbJudged,
                    topic,
                    "out-of-KB topic has relevant passages",
                ),
                QuestionType::Known if max < 2 => report.push(
                    ViolationKind::KnownWithoutAnswer,
                    topic,
                    "known topic has no highly relevant passage",
                ),
                _ => {}
            }
        }

        report
    }

    fn check_answer_shape(
        &self,
        q: &Question,
        answer: &GoldAnswer,
        fallback: &str,
        report: &mut ValidationReport,
    ) {
        let n = answer.source_passage_ids.len();
        match q.qtype {
            QuestionType::Known => {
                if n != 1 {
                    report.push(
                        ViolationKind::AnswerShape,
                        &answer.id,
                        format!("known answer has {n} source passages, expected 1"),
                    );
                } else if let Some(p) = self.passages.get(&answer.source_passage_ids[0]) {
                    if p.text != answer.text {
                        report.push(
                            ViolationKind::AnswerShape,
                            &answer.id,
                            "known answer text differs from its source passage",
                        );
                    }
                }
            }
            QuestionType::Inferred if n < 2 => report.push(
                ViolationKind::AnswerShape,
                &answer.id,
                format!("inferred answer has {n} source passages, expected at least 2"),
            ),
            QuestionType::OutOfKb if n != 0 || answer.text != fallback => report.push(
                ViolationKind::AnswerShape,
                &answer.id,
                "out-of-KB answer must be the fallback message with no sources",
            ),
            _ => {}
        }
    }

    /// Writes the collection back out in the same formats [`load_test_collection`] reads.
    pub fn save(&self, paths: &CollectionPaths) -> Result<()> {
        write_jsonl(&paths.corpus, self.passages.iter())?;
        write_jsonl(&paths.questions, self.questions.iter())?;
        write_jsonl(&paths.answers, self.gold_answers.values())?;
        let mut qrels = String::new();
        for j in &self.judgments {
            qrels.push_str(&format!("{} 0 {} {}\n", j.topic, j.passage_id, j.grade));
        }
        write_string(&paths.qrels, &qrels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptyPassage,
    DuplicateId,
    DanglingReference,
    MixedTopicType,
    AnswerShape,
    InvalidGrade,
    DuplicateJudgment,
    OutOfKbJudged,
    KnownWithoutAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, kind: ViolationKind, subject: &str, detail: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            subject: subject.to_string(),
            detail: detail.into(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn of_kind(&self, kind: ViolationKind) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(move |v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{:?} [{}]: {}", v.kind, v.subject, v.detail)?;
        }
        Ok(())
    }
}

/// Loads a passage file. Malformed lines, empty passages and duplicate ids are errors.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<PassageCorpus> {
    let path = path.as_ref();
    let passages: Vec<Passage> = read_jsonl(path)?;
    if let Some(idx) = passages.iter().position(|p| p.text.trim().is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message: format!("passage `{}` has empty text", passages[idx].id),
        });
    }
    PassageCorpus::new(passages)
}

/// Parses a TREC qrels file: `<topic> <iteration> <passage_id> <grade>`.
pub fn load_qrels(path: impl AsRef<Path>) -> Result<Vec<RelevanceJudgment>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        }
        let grade: u8 = fields[3]
            .parse()
            .map_err(|_| parse_err(format!("invalid grade `{}`", fields[3])))?;
        if grade > 2 {
            return Err(parse_err(format!("grade {grade} is outside 0..=2")));
        }
        if !seen.insert((fields[0].to_string(), fields[2].to_string())) {
            return Err(parse_err(format!(
                "duplicate judgment for topic `{}` passage `{}`",
                fields[0], fields[2]
            )));
        }
        out.push(RelevanceJudgment {
            topic: fields[0].to_string(),
            passage_id: fields[2].to_string(),
            grade,
        });
    }
    Ok(out)
}

/// Loads and cross-links all four files. Every unresolved reference is reported at once.
pub fn load_test_collection(paths: &CollectionPaths) -> Result<TestCollection> {
    let passages = load_corpus(&paths.corpus)?;
    let questions: Vec<Question> = read_jsonl(&paths.questions)?;
    let answers: Vec<GoldAnswer> = read_jsonl(&paths.answers)?;
    let judgments = load_qrels(&paths.qrels)?;

    let answer_ids: BTreeSet<&str> = answers.iter().map(|a| a.id.as_str()).collect();
    let mut dangling = BTreeSet::new();
    for q in &questions {
        if !answer_ids.contains(q.gold_answer_id.as_str()) {
            dangling.insert(q.gold_answer_id.clone());
        }
    }
    for a in &answers {
        for pid in &a.source_passage_ids {
            if !passages.contains(pid) {
                dangling.insert(pid.clone());
            }
        }
    }
    for j in &judgments {
        if !passages.contains(&j.passage_id) {
            dangling.insert(j.passage_id.clone());
        }
    }
    if !dangling.is_empty() {
        return Err(Error::DanglingReferences(dangling.into_iter().collect()));
    }

    let collection = TestCollection::from_parts(passages, questions, answers, judgments);
    let report = collection.validate();
    if !report.is_empty() {
        tracing::warn!(violations = report.len(), "test collection failed validation:\n{report}");
    }
    Ok(collection)
}
