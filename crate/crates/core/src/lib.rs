//! FAQ question answering over a passage collection: BM25 and dense
//! retrieval-augmented generation, an intent classifier baseline, and the
//! evaluation and significance machinery used to compare them.

pub mod corpus;
pub mod dense;
pub mod error;
pub mod generation;
pub mod harness;
pub mod intent;
pub mod jsonl;
pub mod lexical;
pub mod metrics;
pub mod ranking;
pub mod remote;
pub mod significance;
pub mod text;

pub use corpus::{
    load_corpus, load_qrels, load_test_collection, CollectionPaths, GoldAnswer, Passage,
    PassageCorpus, Question, QuestionType, RelevanceJudgment, TestCollection, ValidationReport,
    FALLBACK_ANSWER,
};
pub use dense::{DenseRetriever, EmbeddingProvider, HashedNGramProvider, VectorStore};
pub use error::{Error, Result};
pub use generation::{AnswerResult, ChatClient, Generator, Pipeline};
pub use harness::{Engine, Report, RunConfig};
pub use intent::{AcronymMap, IntentModel};
pub use lexical::{Bm25Params, Bm25Retriever, InvertedIndex};
pub use metrics::{EvalReport, NdcgGain, Prf, SystemId};
pub use ranking::{RankedPassage, Ranking, Retriever};
pub use text::TokenizerConfig;
