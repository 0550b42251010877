use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::config::{EmbeddingConfig, GeneratorConfig, RemoteChatConfig, RunConfig};
use crate::corpus::{load_test_collection, TestCollection};
use crate::dense::{build_store, DenseRetriever, EmbeddingProvider, HashedNGramProvider, RemoteEmbeddingProvider};
use crate::error::{Error, Result};
use crate::generation::{
    answer_from_ranking, AnswerResult, ChatClient, ChatGenerator, Generator, NaDetector, Pipeline,
    RemoteChatClient,
};
use crate::intent::{answer_ib, build_intent_model, load_paraphrases, AcronymMap, IntentModel};
use crate::lexical::{build_index, Bm25Retriever, InvertedIndex};
use crate::metrics::{HashedTokenEmbedder, ProviderTokenEmbedder, TokenEmbedder};
use crate::ranking::{Ranking, Retriever};
use crate::remote::{InFlightLimiter, JsonClient, RemoteConfig};

/// Builds an embedding provider, sharing `limiter` with other remote clients.
pub fn embedding_provider(
    config: &EmbeddingConfig,
    limiter: &Arc<InFlightLimiter>,
) -> Result<Arc<dyn EmbeddingProvider>> {
    Ok(match config {
        EmbeddingConfig::Hashed { dim } => Arc::new(HashedNGramProvider::new(*dim)),
        EmbeddingConfig::Remote { remote, dim } => Arc::new(RemoteEmbeddingProvider::new(
            JsonClient::with_limiter(remote.clone(), limiter.clone())?,
            *dim,
        )),
    })
}

pub fn token_embedder(
    config: &EmbeddingConfig,
    limiter: &Arc<InFlightLimiter>,
) -> Result<Box<dyn TokenEmbedder>> {
    Ok(match config {
        EmbeddingConfig::Hashed { dim } => Box::new(HashedTokenEmbedder(HashedNGramProvider::new(*dim))),
        EmbeddingConfig::Remote { remote, dim } => Box::new(ProviderTokenEmbedder(RemoteEmbeddingProvider::new(
            JsonClient::with_limiter(remote.clone(), limiter.clone())?,
            *dim,
        ))),
    })
}

pub fn chat_client(config: &RemoteChatConfig, limiter: &Arc<InFlightLimiter>) -> Result<Arc<dyn ChatClient>> {
    Ok(Arc::new(RemoteChatClient::new(
        JsonClient::with_limiter(config.remote.clone(), limiter.clone())?,
        config.model.clone(),
        config.decoding,
    )))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub retrieval_ms: f64,
    pub generation_ms: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// A remote dependency the engine talks to, for health reporting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RemoteComponent {
    pub name: String,
    pub endpoint: String,
}

/// Immutable question-answering state shared by the batch harness and the server.
pub struct Engine {
    config: RunConfig,
    collection: TestCollection,
    intent: Option<IntentModel>,
    bm25: Option<Bm25Retriever>,
    dense: Option<DenseRetriever>,
    generator: Arc<dyn Generator>,
    detector: NaDetector,
    limiter: Arc<InFlightLimiter>,
}

impl Engine {
    /// Loads the collection and builds the components of every configured pipeline.
    pub fn build(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let collection = load_test_collection(&config.collection)?;
        Self::with_collection(config, collection)
    }

    pub fn with_collection(config: RunConfig, collection: TestCollection) -> Result<Self> {
        config.validate()?;
        let limiter = InFlightLimiter::new(max_in_flight(&config));
        let wants = |p| config.pipelines.contains(&p);

        let intent = if wants(Pipeline::Ib) {
            let acronyms = match &config.acronyms {
                Some(path) => AcronymMap::load(path)?,
                None => AcronymMap::default(),
            };
            let variations = match &config.paraphrases {
                Some(path) => load_paraphrases(path)?,
                None => BTreeMap::new(),
            };
            Some(build_intent_model(&collection, &variations, &config.intent, acronyms)?)
        } else {
            None
        };
        let bm25 = if wants(Pipeline::RagBm25) {
            Some(Bm25Retriever {
                index: build_index(collection.passages(), &config.tokenizer)?,
                params: config.bm25,
            })
        } else {
            None
        };
        let dense = if wants(Pipeline::RagDense) {
            let provider = embedding_provider(&config.embedding, &limiter)?;
            let similarity = config.similarity.unwrap_or(provider.default_similarity());
            Some(DenseRetriever {
                store: build_store(collection.passages(), provider.as_ref(), similarity)?,
                provider,
            })
        } else {
            None
        };
        let generator: Arc<dyn Generator> = match &config.generator {
            GeneratorConfig::Extractive(g) => Arc::new(g.clone()),
            GeneratorConfig::Remote(c) => Arc::new(ChatGenerator::new(chat_client(c, &limiter)?)),
        };
        let detector = NaDetector::with_patterns(&config.refusal_patterns)?;
        Ok(Self {
            config,
            collection,
            intent,
            bm25,
            dense,
            generator,
            detector,
            limiter,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn collection(&self) -> &TestCollection {
        &self.collection
    }

    pub fn bm25_index(&self) -> Option<&InvertedIndex> {
        self.bm25.as_ref().map(|r| &r.index)
    }

    pub fn intent_model(&self) -> Option<&IntentModel> {
        self.intent.as_ref()
    }

    pub fn pipelines(&self) -> &[Pipeline] {
        &self.config.pipelines
    }

    pub fn generator_id(&self) -> String {
        self.generator.id()
    }

    /// The in-flight cap shared by every remote client this engine created.
    pub fn limiter(&self) -> &Arc<InFlightLimiter> {
        &self.limiter
    }

    pub fn remote_components(&self) -> Vec<RemoteComponent> {
        let mut out = Vec::new();
        if let GeneratorConfig::Remote(c) = &self.config.generator {
            out.push(RemoteComponent {
                name: "generator".into(),
                endpoint: c.remote.endpoint.clone(),
            });
        }
        if self.dense.is_some() {
            if let EmbeddingConfig::Remote { remote, .. } = &self.config.embedding {
                out.push(RemoteComponent {
                    name: "embedding".into(),
                    endpoint: remote.endpoint.clone(),
                });
            }
        }
        out
    }

    fn retriever(&self, pipeline: Pipeline) -> Result<&dyn Retriever> {
        let r: Option<&dyn Retriever> = match pipeline {
            Pipeline::Ib => None,
            Pipeline::RagBm25 => self.bm25.as_ref().map(|r| r as &dyn Retriever),
            Pipeline::RagDense => self.dense.as_ref().map(|r| r as &dyn Retriever),
        };
        r.ok_or_else(|| Error::InvalidArgument(format!("pipeline `{pipeline}` is not enabled")))
    }

    /// Answers one question. IB ignores `cutoff` and reports cutoff 1.
    pub fn answer(
        &self,
        pipeline: Pipeline,
        question_id: &str,
        question: &str,
        cutoff: usize,
    ) -> Result<(AnswerResult, Ranking)> {
        self.answer_timed(pipeline, question_id, question, cutoff)
            .map(|(a, r, _)| (a, r))
    }

    pub fn answer_timed(
        &self,
        pipeline: Pipeline,
        question_id: &str,
        question: &str,
        cutoff: usize,
    ) -> Result<(AnswerResult, Ranking, StageTimings)> {
        if pipeline == Pipeline::Ib {
            let model = self
                .intent
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("pipeline `ib` is not enabled".into()))?;
            let start = Instant::now();
            let (answer, ranking) = answer_ib(model, question_id, question);
            let timings = StageTimings {
                retrieval_ms: ms(start.elapsed()),
                generation_ms: 0.0,
            };
            return Ok((answer, ranking, timings));
        }
        let retriever = self.retriever(pipeline)?;
        let start = Instant::now();
        let ranking = retriever.retrieve(question_id, question, cutoff)?;
        let retrieval = start.elapsed();
        let start = Instant::now();
        let answer = answer_from_ranking(
            self.generator.as_ref(),
            &self.detector,
            self.collection.passages(),
            pipeline,
            question,
            &ranking,
        )?;
        let timings = StageTimings {
            retrieval_ms: ms(retrieval),
            generation_ms: ms(start.elapsed()),
        };
        Ok((answer, ranking, timings))
    }
}

fn max_in_flight(config: &RunConfig) -> usize {
    let mut remotes: Vec<&RemoteConfig> = Vec::new();
    if let GeneratorConfig::Remote(c) = &config.generator {
        remotes.push(&c.remote);
    }
    if let EmbeddingConfig::Remote { remote, .. } = &config.embedding {
        remotes.push(remote);
    }
    remotes.iter().map(|r| r.max_in_flight).min().unwrap_or(4).max(1)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{GoldAnswer, Passage, PassageCorpus, Question, QuestionType, RelevanceJudgment, FALLBACK_ANSWER};

    pub(crate) fn tiny_collection() -> TestCollection {
        let passages = PassageCorpus::new(vec![
            Passage {
                id: "p1".into(),
                text: "The capstone project runs over two semesters with an industry partner.".into(),
                topic: None,
            },
            Passage {
                id: "p2".into(),
                text: "Tuition fees are listed on the fees page for each year.".into(),
                topic: None,
            },
        ])
        .unwrap();
        let questions = vec![
            Question {
                id: "q1".into(),
                text: "How long is the capstone project?".into(),
                qtype: QuestionType::Known,
                topic: "t1".into(),
                gold_answer_id: "a1".into(),
            },
            Question {
                id: "q2".into(),
                text: "Where is the nearest zoo?".into(),
                qtype: QuestionType::OutOfKb,
                topic: "t2".into(),
                gold_answer_id: "a0".into(),
            },
        ];
        let answers = vec![
            GoldAnswer {
                id: "a1".into(),
                text: "The capstone project runs over two semesters with an industry partner.".into(),
                source_passage_ids: vec!["p1".into()],
            },
            GoldAnswer {
                id: "a0".into(),
                text: FALLBACK_ANSWER.into(),
                source_passage_ids: vec![],
            },
        ];
        let judgments = vec![RelevanceJudgment {
            topic: "t1".into(),
            passage_id: "p1".into(),
            grade: 2,
        }];
        TestCollection::from_parts(passages, questions, answers, judgments)
    }

    #[test]
    fn answers_with_every_pipeline() {
        let engine = Engine::with_collection(RunConfig::default(), tiny_collection()).unwrap();
        let (a, r) = engine.answer(Pipeline::Ib, "q1", "How long is the capstone project?", 3).unwrap();
        assert!(a.answered);
        assert_eq!(a.cutoff, 1);
        assert_eq!(r.passage_ids().collect::<Vec<_>>(), ["p1"]);

        let (a, r, _) = engine
            .answer_timed(Pipeline::RagBm25, "q1", "capstone project", 3)
            .unwrap();
        assert!(a.answered);
        assert_eq!(r.passage_ids().next(), Some("p1"));

        let (a, r) = engine.answer(Pipeline::RagDense, "q1", "capstone", 1).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(a.source_passage_ids, ["p1"]);

        let (a, r) = engine.answer(Pipeline::Ib, "q2", "Where is the nearest zoo?", 1).unwrap();
        assert!(!a.answered && r.is_empty());
    }

    #[test]
    fn disabled_pipeline_is_an_error() {
        let config = RunConfig {
            pipelines: vec![Pipeline::RagBm25],
            ..RunConfig::default()
        };
        let engine = Engine::with_collection(config, tiny_collection()).unwrap();
        assert!(engine.answer(Pipeline::Ib, "q", "x", 1).is_err());
        assert!(engine.answer(Pipeline::RagDense, "q", "x", 1).is_err());
        assert!(engine.remote_components().is_empty());
    }
}
