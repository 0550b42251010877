//! Exact nearest-neighbour retrieval over passage embeddings.
//!
//! Two providers are available: a remote encoder speaking a small JSON
//! protocol, and a deterministic hashed character-trigram encoder that needs
//! no model at all.

use std::hash::Hasher;
use std::sync::Arc;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::corpus::PassageCorpus;
use crate::error::{Error, Result};
use crate::generation::Pipeline;
use crate::ranking::{RankedPassage, Ranking, Retriever};
use crate::remote::JsonClient;
use crate::text::{tokenize, TokenizerConfig};

pub type EmbeddingVector = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Dot,
    Cosine,
}

impl Similarity {
    pub fn score(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Similarity::Dot => dot(a, b),
            Similarity::Cosine => cosine(a, b),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Zero vectors have similarity 0 with everything.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Short identifier recorded in reports.
    fn id(&self) -> String;

    fn default_similarity(&self) -> Similarity;

    /// One vector per text, order preserved. Callers should go through [`embed`],
    /// which checks counts, dimensions and finiteness.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;
}

/// Embeds `texts` and checks the provider's output.
pub fn embed(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no texts to embed".into()));
    }
    let vectors = provider.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::CountMismatch {
            expected: texts.len(),
            actual: vectors.len(),
        });
    }
    let dim = vectors[0].len();
    for v in &vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Transport("embedding contains non-finite values".into()));
        }
    }
    Ok(vectors)
}

/// Hashed character trigrams of each `#token#`, bucketed into `dim` slots and
/// L2-normalised. Texts without any token map to the zero vector.
#[derive(Debug, Clone, PartialEq)]
pub struct HashedNGramProvider {
    pub dim: usize,
    tokenizer: TokenizerConfig,
}

impl Default for HashedNGramProvider {
    fn default() -> Self {
        Self::new(256)
    }
}

impl HashedNGramProvider {
    pub fn new(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            tokenizer: TokenizerConfig::default(),
        }
    }

    fn add_token(&self, token: &str, v: &mut [f64]) {
        let padded: Vec<char> = std::iter::once('#')
            .chain(token.chars())
            .chain(std::iter::once('#'))
            .collect();
        let mut buf = String::with_capacity(12);
        for w in padded.windows(3) {
            buf.clear();
            buf.extend(w);
            let mut h = FnvHasher::default();
            h.write(buf.as_bytes());
            v[(h.finish() % self.dim as u64) as usize] += 1.0;
        }
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text, &self.tokenizer) {
            self.add_token(&token, &mut v);
        }
        normalize(&mut v);
        v
    }

    /// Embedding of a single already-tokenized word.
    pub fn embed_token(&self, token: &str) -> EmbeddingVector {
        let mut v = vec![0.0; self.dim];
        self.add_token(&token.to_lowercase(), &mut v);
        normalize(&mut v);
        v
    }
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

impl EmbeddingProvider for HashedNGramProvider {
    fn id(&self) -> String {
        format!("hashed-trigram-{}", self.dim)
    }

    fn default_similarity(&self) -> Similarity {
        Similarity::Cosine
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Remote encoder: POST `{"texts": [..]}`, response `{"vectors": [[..]], "dim": n}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingProvider {
    client: JsonClient,
    /// Expected dimension; checked against every response when set.
    pub dim: Option<usize>,
}

impl RemoteEmbeddingProvider {
    pub fn new(client: JsonClient, dim: Option<usize>) -> Self {
        Self { client, dim }
    }
}

impl EmbeddingProvider for RemoteEmbeddingProvider {
    fn id(&self) -> String {
        format!("remote:{}", self.client.config().endpoint)
    }

    fn default_similarity(&self) -> Similarity {
        Similarity::Dot
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let resp: EmbedResponse = self.client.post(&EmbedRequest { texts })?;
        if resp.vectors.len() != texts.len() {
            return Err(Error::CountMismatch {
                expected: texts.len(),
                actual: resp.vectors.len(),
            });
        }
        let expected = self.dim.unwrap_or(resp.dim);
        if resp.dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: resp.dim,
            });
        }
        if let Some(v) = resp.vectors.iter().find(|v| v.len() != expected) {
            return Err(Error::DimensionMismatch {
                expected,
                actual: v.len(),
            });
        }
        Ok(resp.vectors)
    }
}

/// One vector per corpus passage. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorStore {
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    pub dim: usize,
    pub similarity: Similarity,
}

impl VectorStore {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.vectors.iter().map(Vec::as_slice))
    }

    /// Every passage scored against `query`, in ranking order.
    pub fn score_all(&self, query: &[f64]) -> Vec<RankedPassage> {
        let mut all: Vec<RankedPassage> = self
            .iter()
            .map(|(id, v)| RankedPassage {
                passage_id: id.to_string(),
                score: self.similarity.score(query, v),
            })
            .collect();
        all.sort_by(crate::ranking::rank_order);
        all
    }
}

const EMBED_BATCH: usize = 32;

pub fn build_store(
    corpus: &PassageCorpus,
    provider: &dyn EmbeddingProvider,
    similarity: Similarity,
) -> Result<VectorStore> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let texts: Vec<String> = corpus.iter().map(|p| p.text.clone()).collect();
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        vectors.extend(embed(provider, chunk)?);
    }
    let dim = vectors[0].len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.len(),
        });
    }
    Ok(VectorStore {
        ids: corpus.iter().map(|p| p.id.clone()).collect(),
        vectors,
        dim,
        similarity,
    })
}

/// Exact top-`cutoff` by similarity. Only empty when the store is.
pub fn dense_search(
    store: &VectorStore,
    provider: &dyn EmbeddingProvider,
    question_id: &str,
    query_text: &str,
    cutoff: usize,
) -> Result<Ranking> {
    let query = embed(provider, &[query_text.to_string()])?.remove(0);
    if query.len() != store.dim {
        return Err(Error::DimensionMismatch {
            expected: store.dim,
            actual: query.len(),
        });
    }
    let mut all = store.score_all(&query);
    all.truncate(cutoff);
    Ok(Ranking {
        question_id: question_id.to_string(),
        entries: all,
        cutoff,
    })
}

pub struct DenseRetriever {
    pub store: VectorStore,
    pub provider: Arc<dyn EmbeddingProvider>,
}

impl Retriever for DenseRetriever {
    fn pipeline(&self) -> Pipeline {
        Pipeline::RagDense
    }

    fn retrieve(&self, question_id: &str, query: &str, cutoff: usize) -> Result<Ranking> {
        if cutoff == 0 {
            return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
        }
        dense_search(&self.store, self.provider.as_ref(), question_id, query, cutoff)
    }
}
