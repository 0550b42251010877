//! Batch orchestration shared by the CLI and the server: configuration, the
//! answering engine, run artifacts, scoring, significance and reporting.

pub mod batch;
pub mod compare;
pub mod config;
pub mod engine;
pub mod eval;
pub mod report;

use crate::corpus::{QuestionType, TestCollection};
use crate::error::Result;
use crate::generation::ChatClient;
use crate::intent::{generate_paraphrases, ParaphraseRecord};

pub use batch::{run_batch, run_systems, systems, RunArtifacts, RunManifest};
pub use compare::{compare, merge_reports, Comparison, Metric};
pub use config::{EmbeddingConfig, GeneratorConfig, MetricsConfig, RemoteChatConfig, RunConfig};
pub use engine::{Engine, StageTimings};
pub use eval::evaluate;
pub use report::{emit_report, render, render_table, Report, ReportFormat};

/// Asks `client` for up to `max_n` paraphrases of each Known topic's first
/// question. The records are meant to be saved and reviewed before use.
pub fn augment(
    collection: &TestCollection,
    client: &dyn ChatClient,
    max_n: usize,
) -> Result<Vec<ParaphraseRecord>> {
    collection
        .topics(QuestionType::Known)
        .into_iter()
        .map(|topic| {
            let canonical = collection
                .questions()
                .iter()
                .find(|q| q.topic == topic)
                .expect("topic comes from the question list");
            Ok(ParaphraseRecord {
                topic: topic.to_string(),
                question: canonical.text.clone(),
                variations: generate_paraphrases(client, &canonical.text, max_n)?,
            })
        })
        .collect()
}
