//! Inverted index and Okapi BM25 ranking.
//!
//! ```text
//! score(D, Q) = Σ_t idf(t) · tf(t,D)·(k1 + 1) / (tf(t,D) + k1·(1 − b + b·|D|/avgdl))
//! idf(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//! ```
//!
//! The `1 +` inside the log keeps idf positive for terms present in more than
//! half of the corpus.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::PassageCorpus;
use crate::error::{Error, Result};
use crate::generation::Pipeline;
use crate::ranking::{RankedPassage, Ranking, Retriever};
use crate::text::{tokenize, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::InvalidArgument(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub passage_id: String,
    pub tf: u32,
}

/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    /// Term to postings sorted by passage id.
    pub postings: BTreeMap<String, Vec<Posting>>,
    pub doc_lengths: BTreeMap<String, usize>,
    pub doc_count: usize,
    pub avg_doc_length: f64,
    pub tokenizer: TokenizerConfig,
}

pub fn build_index(corpus: &PassageCorpus, config: &TokenizerConfig) -> Result<InvertedIndex> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = BTreeMap::new();
    for p in corpus.iter() {
        let tokens = tokenize(&p.text, config);
        doc_lengths.insert(p.id.clone(), tokens.len());
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, tf) in tf {
            postings.entry(term).or_default().push(Posting {
                passage_id: p.id.clone(),
                tf,
            });
        }
    }
    for list in postings.values_mut() {
        list.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
    }
    let total: usize = doc_lengths.values().sum();
    Ok(InvertedIndex {
        postings,
        avg_doc_length: total as f64 / corpus.len() as f64,
        doc_count: corpus.len(),
        doc_lengths,
        tokenizer: config.clone(),
    })
}

impl InvertedIndex {
    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, passage_id: &str) -> u32 {
        self.postings
            .get(term)
            .and_then(|list| {
                list.binary_search_by(|p| p.passage_id.as_str().cmp(passage_id))
                    .ok()
                    .map(|i| list[i].tf)
            })
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.doc_count as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: usize, params: &Bm25Params) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - params.b + params.b * doc_len as f64 / self.avg_doc_length;
        idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
    }
}

/// Repeated query tokens contribute once per occurrence.
pub fn bm25_score(
    index: &InvertedIndex,
    query_tokens: &[String],
    passage_id: &str,
    params: &Bm25Params,
) -> Result<f64> {
    let doc_len = *index
        .doc_lengths
        .get(passage_id)
        .ok_or_else(|| Error::UnknownPassage(passage_id.to_string()))?;
    Ok(query_tokens
        .iter()
        .map(|t| {
            let tf = index.term_freq(t, passage_id);
            if tf == 0 {
                0.0
            } else {
                index.term_weight(index.idf(t), tf, doc_len, params)
            }
        })
        .sum())
}

/// Top-`cutoff` passages by BM25. Passages matching no query term are left out,
/// so the ranking may be shorter than `cutoff` or empty.
pub fn search(
    index: &InvertedIndex,
    question_id: &str,
    query_text: &str,
    cutoff: usize,
    params: &Bm25Params,
) -> Ranking {
    let query = tokenize(query_text, &index.tokenizer);
    let mut acc: HashMap<&str, f64> = HashMap::new();
    for term in &query {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        let idf = index.idf(term);
        for p in list {
            let len = index.doc_lengths[&p.passage_id];
            *acc.entry(&p.passage_id).or_default() += index.term_weight(idf, p.tf, len, params);
        }
    }
    let scored = acc
        .into_iter()
        .filter(|(_, s)| *s > 0.0)
        .map(|(id, score)| RankedPassage {
            passage_id: id.to_string(),
            score,
        })
        .collect();
    Ranking::from_scored(question_id, scored, cutoff)
}

#[derive(Debug, Clone)]
pub struct Bm25Retriever {
    pub index: InvertedIndex,
    pub params: Bm25Params,
}

impl Retriever for Bm25Retriever {
    fn pipeline(&self) -> Pipeline {
        Pipeline::RagBm25
    }

    fn retrieve(&self, question_id: &str, query: &str, cutoff: usize) -> Result<Ranking> {
        if cutoff == 0 {
            return Err(Error::InvalidArgument("cutoff must be at least 1".into()));
        }
        Ok(search(&self.index, question_id, query, cutoff, &self.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    fn corpus(docs: &[(&str, &str)]) -> PassageCorpus {
        PassageCorpus::new(
            docs.iter()
                .map(|(id, text)| Passage {
                    id: id.to_string(),
                    text: text.to_string(),
                    topic: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn toy() -> InvertedIndex {
        build_index(
            &corpus(&[("d1", "cat sat"), ("d2", "cat cat ran"), ("d3", "dog ran")]),
            &TokenizerConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn index_statistics() {
        let idx = toy();
        assert_eq!(idx.doc_count, 3);
        assert!((idx.avg_doc_length - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(idx.doc_freq("cat"), 2);
        assert_eq!(idx.term_freq("cat", "d2"), 2);
        assert!(!idx.postings.contains_key("zebra"));
        let ids: Vec<_> = idx.postings["ran"].iter().map(|p| p.passage_id.as_str()).collect();
        assert_eq!(ids, ["d2", "d3"]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(
            build_index(&PassageCorpus::default(), &TokenizerConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn worked_example_scores() {
        // idf(cat) = ln(1 + 1.5/2.5) = ln 1.6
        // d1: 0.4700 · 2.2 / (1 + 1.2·(0.25 + 0.75·2/(7/3))) = 0.4992
        // d2: 0.4700 · 4.4 / (2 + 1.2·(0.25 + 0.75·3/(7/3))) = 0.5982
        let idx = toy();
        let p = Bm25Params::default();
        let q = vec!["cat".to_string()];
        let idf = 1.6f64.ln();
        let d1 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / (7.0 / 3.0)));
        let d2 = idf * 4.4 / (2.0 + 1.2 * (0.25 + 0.75 * 3.0 / (7.0 / 3.0)));
        assert!((bm25_score(&idx, &q, "d1", &p).unwrap() - d1).abs() < 1e-12);
        assert!((bm25_score(&idx, &q, "d2", &p).unwrap() - d2).abs() < 1e-12);
        assert!((d1 - 0.4992).abs() < 1e-3 && (d2 - 0.5982).abs() < 1e-3);
        assert_eq!(bm25_score(&idx, &["zebra".into()], "d1", &p).unwrap(), 0.0);
    }

    #[test]
    fn unknown_passage_is_an_error() {
        let idx = toy();
        assert!(matches!(
            bm25_score(&idx, &["cat".into()], "d9", &Bm25Params::default()),
            Err(Error::UnknownPassage(_))
        ));
    }

    #[test]
    fn search_orders_and_filters() {
        let idx = toy();
        let p = Bm25Params::default();
        let r = search(&idx, "q", "cat", 2, &p);
        assert_eq!(r.passage_ids().collect::<Vec<_>>(), ["d2", "d1"]);
        assert!(search(&idx, "q", "zebra", 5, &p).is_empty());
        let top = search(&idx, "q", "cat", 1, &p);
        assert_eq!(top.passage_ids().collect::<Vec<_>>(), ["d2"]);
    }

    #[test]
    fn params_are_checked() {
        assert!(Bm25Params { k1: -1.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
        assert!(Bm25Params::default().validate().is_ok());
    }
}
