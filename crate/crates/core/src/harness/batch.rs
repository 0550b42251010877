use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::Engine;
use crate::corpus::TestCollection;
use crate::error::{Error, Result};
use crate::generation::{AnswerResult, Pipeline};
use crate::jsonl::{self, write_jsonl};
use crate::metrics::SystemId;
use crate::ranking::{format_trec_run, Ranking};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const TIMING_FILE: &str = "timing.json";
/// Topic-level judgments expanded to one line per question, for third-party
/// evaluators that key qrels by the run file's query id.
pub const QUESTION_QRELS_FILE: &str = "qrels.questions.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemEntry {
    pub system: SystemId,
    pub label: String,
    pub run_file: String,
    pub answers_file: String,
    pub questions: usize,
    pub failures: usize,
}

/// Deterministic summary of a batch run. Timings live in a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub collection: String,
    pub generator: String,
    pub systems: Vec<SystemEntry>,
}

impl RunManifest {
    pub fn failures(&self) -> usize {
        self.systems.iter().map(|s| s.failures).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemTiming {
    pub label: String,
    pub total_ms: f64,
    pub mean_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunArtifacts {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = serde_json::from_str(&jsonl::read_to_string(&dir.join(MANIFEST_FILE))?)?;
        Ok(Self { dir, manifest })
    }

    pub fn run_path(&self, entry: &SystemEntry) -> PathBuf {
        self.dir.join(&entry.run_file)
    }

    pub fn answers_path(&self, entry: &SystemEntry) -> PathBuf {
        self.dir.join(&entry.answers_file)
    }
}

/// IB is rank-free and runs once at cutoff 1; RAG pipelines run at every cutoff.
pub fn systems(pipelines: &[Pipeline], cutoffs: &[usize]) -> Vec<SystemId> {
    let mut out = Vec::new();
    for &p in pipelines {
        if p == Pipeline::Ib {
            out.push(SystemId::new(p, 1));
        } else {
            out.extend(cutoffs.iter().map(|&k| SystemId::new(p, k)));
        }
    }
    out.dedup();
    out
}

fn file_stem(system: &SystemId) -> String {
    match system.pipeline {
        Pipeline::Ib => "ib".into(),
        p => format!("{p}.k{}", system.cutoff),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    jsonl::write_string(path, contents)
}

/// Answers every question with every configured system and writes the run
/// artifacts to `out_dir`. Per-question failures are recorded, not fatal.
pub fn run_batch(engine: &Engine, out_dir: &Path) -> Result<RunArtifacts> {
    let config = engine.config();
    run_systems(engine, &systems(&config.pipelines, &config.cutoff_set()), out_dir)
}

pub fn run_systems(engine: &Engine, systems: &[SystemId], out_dir: &Path) -> Result<RunArtifacts> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(engine.config().workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let collection = engine.collection();
    let mut entries = Vec::new();
    let mut timings = Vec::new();
    for &system in systems {
        let start = Instant::now();
        let outcomes: Vec<(AnswerResult, Ranking)> = pool.install(|| {
            collection
                .questions()
                .par_iter()
                .map(|q| {
                    match engine.answer(system.pipeline, &q.id, &q.text, system.cutoff) {
                        Ok(pair) => pair,
                        Err(e) => {
                            tracing::warn!(question = %q.id, system = %system, error = %e, "question failed");
                            (
                                AnswerResult::errored(&q.id, system.pipeline, system.cutoff, &e),
                                Ranking::empty(&q.id, system.cutoff),
                            )
                        }
                    }
                })
                .collect()
        });
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;
        let label = system.label();
        let stem = file_stem(&system);
        let rankings: Vec<Ranking> = outcomes.iter().map(|(_, r)| r.clone()).collect();
        let answers: Vec<&AnswerResult> = outcomes.iter().map(|(a, _)| a).collect();
        let failures = answers.iter().filter(|a| a.error.is_some()).count();
        let entry = SystemEntry {
            system,
            label: label.clone(),
            run_file: format!("{stem}.run"),
            answers_file: format!("{stem}.answers.jsonl"),
            questions: answers.len(),
            failures,
        };
        write(&out_dir.join(&entry.run_file), &format_trec_run(&rankings, &label))?;
        write_jsonl(&out_dir.join(&entry.answers_file), answers)?;
        if failures > 0 {
            tracing::warn!(system = %label, failures, "batch finished with failures");
        }
        timings.push(SystemTiming {
            label,
            total_ms: elapsed,
            mean_ms: elapsed / collection.questions().len().max(1) as f64,
        });
        entries.push(entry);
    }
    let manifest = RunManifest {
        collection: collection.fingerprint(),
        generator: engine.generator_id(),
        systems: entries,
    };
    write(&out_dir.join(MANIFEST_FILE), &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    write(&out_dir.join(CONFIG_FILE), &(serde_json::to_string_pretty(engine.config())? + "\n"))?;
    write(&out_dir.join(TIMING_FILE), &(serde_json::to_string_pretty(&timings)? + "\n"))?;
    write(&out_dir.join(QUESTION_QRELS_FILE), &question_qrels(collection))?;
    Ok(RunArtifacts {
        dir: out_dir.to_path_buf(),
        manifest,
    })
}

/// `<question_id> 0 <passage_id> <grade>` for every judged passage of each question's topic.
pub fn question_qrels(collection: &TestCollection) -> String {
    let mut out = String::new();
    for q in collection.questions() {
        for (pid, grade) in collection.qrels(&q.topic) {
            let _ = writeln!(out, "{} 0 {} {}", q.id, pid, grade);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::RunConfig;
    use crate::harness::engine::tests::tiny_collection;
    use crate::ranking::parse_trec_run;

    #[test]
    fn system_list() {
        let s = systems(&Pipeline::ALL, &[1, 3, 5]);
        let labels: Vec<_> = s.iter().map(SystemId::label).collect();
        assert_eq!(
            labels,
            ["ib", "rag-bm25@1", "rag-bm25@3", "rag-bm25@5", "rag-dense@1", "rag-dense@3", "rag-dense@5"]
        );
    }

    #[test]
    fn writes_artifacts_deterministically() {
        let engine = Engine::with_collection(RunConfig::default(), tiny_collection()).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let first = run_batch(&engine, a.path()).unwrap();
        run_batch(&engine, b.path()).unwrap();
        assert_eq!(first.manifest.systems.len(), 7);
        assert_eq!(first.manifest.failures(), 0);
        for entry in &first.manifest.systems {
            for name in [&entry.run_file, &entry.answers_file] {
                let x = std::fs::read(a.path().join(name)).unwrap();
                let y = std::fs::read(b.path().join(name)).unwrap();
                assert_eq!(x, y, "{name} differs between runs");
            }
            let answers: Vec<AnswerResult> = jsonl::read_jsonl(&first.answers_path(entry)).unwrap();
            assert_eq!(answers.len(), 2);
            let run = parse_trec_run(&std::fs::read_to_string(first.run_path(entry)).unwrap()).unwrap();
            assert!(run.iter().all(|l| l.tag == entry.label));
        }
        let reopened = RunArtifacts::open(a.path()).unwrap();
        assert_eq!(reopened.manifest, first.manifest);
        let qrels = std::fs::read_to_string(a.path().join(QUESTION_QRELS_FILE)).unwrap();
        assert_eq!(qrels, "q1 0 p1 2\n");
    }
}
