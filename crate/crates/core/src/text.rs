//! Deterministic word tokenization shared by retrieval, intent matching and metrics.

use std::collections::BTreeSet;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

/// Small English stopword list, used only when stopword removal is switched on.
pub const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "can", "do", "does", "for", "from",
    "how", "i", "if", "in", "into", "is", "it", "my", "of", "on", "or", "the", "their", "there",
    "these", "they", "this", "to", "was", "what", "when", "where", "which", "who", "will", "with",
    "you", "your",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    /// Tokens removed after case folding.
    pub stopwords: Option<BTreeSet<String>>,
    /// Porter2 (Snowball English) stemming.
    pub stem: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            stopwords: None,
            stem: false,
        }
    }
}

impl TokenizerConfig {
    pub fn with_english_stopwords(mut self) -> Self {
        self.stopwords = Some(ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_stemming(mut self) -> Self {
        self.stem = true;
        self
    }
}

/// Splits on every non-alphanumeric character (Unicode aware).
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    let stemmer = config.stem.then(|| Stemmer::create(Algorithm::English));
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_string()
            }
        })
        .filter(|t| {
            config
                .stopwords
                .as_ref()
                .is_none_or(|stop| !stop.contains(t))
        })
        .map(|t| match &stemmer {
            Some(s) => s.stem(&t).into_owned(),
            None => t,
        })
        .collect()
}
