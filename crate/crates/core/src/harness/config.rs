use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::CollectionPaths;
use crate::dense::Similarity;
use crate::error::{Error, Result};
use crate::generation::{Decoding, ExtractiveGenerator, Pipeline};
use crate::intent::IntentConfig;
use crate::jsonl;
use crate::lexical::Bm25Params;
use crate::metrics::NdcgGain;
use crate::remote::RemoteConfig;
use crate::text::TokenizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatConfig {
    pub remote: RemoteConfig,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub decoding: Decoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorConfig {
    Extractive(ExtractiveGenerator),
    Remote(RemoteChatConfig),
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::Extractive(ExtractiveGenerator::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Hashed {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Remote {
        remote: RemoteConfig,
        #[serde(default)]
        dim: Option<usize>,
    },
}

fn default_dim() -> usize {
    256
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self::Hashed { dim: default_dim() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub gain: NdcgGain,
    /// Token embedder for BERTScore.
    pub token_embedder: EmbeddingConfig,
    /// Tokenization for ROUGE-1 and BERTScore.
    pub tokenizer: TokenizerConfig,
}

/// Everything a batch run or the server needs. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub collection: CollectionPaths,
    pub acronyms: Option<PathBuf>,
    /// Recorded paraphrases (see `augment`) used as extra intent utterances.
    pub paraphrases: Option<PathBuf>,
    pub pipelines: Vec<Pipeline>,
    pub cutoffs: Vec<usize>,
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub intent: IntentConfig,
    pub generator: GeneratorConfig,
    /// Client for paraphrase generation; only `augment` needs it.
    pub paraphraser: Option<RemoteChatConfig>,
    pub embedding: EmbeddingConfig,
    /// Defaults to the embedding provider's own preference.
    pub similarity: Option<Similarity>,
    pub refusal_patterns: Vec<String>,
    pub metrics: MetricsConfig,
    pub alpha: f64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            collection: CollectionPaths::in_dir("data/testbed"),
            acronyms: None,
            paraphrases: None,
            pipelines: Pipeline::ALL.to_vec(),
            cutoffs: vec![1, 3, 5],
            tokenizer: TokenizerConfig::default(),
            bm25: Bm25Params::default(),
            intent: IntentConfig::default(),
            generator: GeneratorConfig::default(),
            paraphraser: None,
            embedding: EmbeddingConfig::default(),
            similarity: None,
            refusal_patterns: Vec::new(),
            metrics: MetricsConfig::default(),
            alpha: 0.01,
            workers: 4,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config: RunConfig = serde_json::from_str(&jsonl::read_to_string(path)?)
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.collection.corpus);
        fix(&mut self.collection.questions);
        fix(&mut self.collection.answers);
        fix(&mut self.collection.qrels);
        if let Some(p) = self.acronyms.as_mut() {
            fix(p);
        }
        if let Some(p) = self.paraphrases.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoffs.is_empty() || self.cutoffs.contains(&0) {
            return Err(Error::InvalidArgument(
                "cutoffs must be a non-empty list of positive integers".into(),
            ));
        }
        if self.pipelines.is_empty() {
            return Err(Error::InvalidArgument("no pipelines selected".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be at least 1".into()));
        }
        self.bm25.validate()
    }

    /// Sorted, deduplicated cutoffs.
    pub fn cutoff_set(&self) -> Vec<usize> {
        let mut c = self.cutoffs.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// True when every component runs locally without randomness.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.generator, GeneratorConfig::Extractive(_))
            && matches!(self.embedding, EmbeddingConfig::Hashed { .. })
            && matches!(self.metrics.token_embedder, EmbeddingConfig::Hashed { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(c.is_deterministic());
        assert_eq!(c.cutoff_set(), [1, 3, 5]);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(
            r#"{"pipelines": ["rag-bm25"], "generator": {"kind": "extractive", "min_score": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(c.pipelines, [Pipeline::RagBm25]);
        assert_eq!(c.alpha, 0.01);
        let GeneratorConfig::Extractive(g) = &c.generator else {
            panic!("expected extractive generator");
        };
        assert_eq!(g.min_score, Some(0.5));
        assert_eq!(g.char_budget, 1200);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"acronyms": "acr.json"}"#).unwrap();
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.acronyms.unwrap(), dir.path().join("acr.json"));
        assert_eq!(c.collection.corpus, dir.path().join("data/testbed/passages.jsonl"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = RunConfig {
            cutoffs: vec![0],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
