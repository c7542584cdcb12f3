//! Okapi BM25 over tokenized documents.
//!
//! Serves two jobs: the lexical baseline retriever, and the fallback scorer
//! for hard-negative mining before a trained encoder exists. Uses the
//! +1-inside-the-log idf variant, which keeps every idf strictly positive:
//!
//! ```text
//! idf(t)       = ln((N - df + 0.5) / (df + 0.5) + 1)
//! tf_norm(t,d) = tf (k1 + 1) / (tf + k1 (1 - b + b * |d| / avgdl))
//! ```

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::par;

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

/// Inverted index with per-document term lists for point lookups.
#[derive(Debug, Clone)]
pub struct Bm25Index {
    k1: f64,
    b: f64,
    term_ids: HashMap<String, u32>,
    /// Postings per term id: (doc slot, tf), slots ascending.
    postings: Vec<Vec<(u32, u32)>>,
    /// Per-doc sorted (term id, tf) pairs, for single-document scoring.
    doc_terms: Vec<Vec<(u32, u32)>>,
    doc_len: Vec<u32>,
    doc_ids: Vec<i64>,
    slot_of: HashMap<i64, u32>,
    avgdl: f64,
}

impl Bm25Index {
    /// Index `(document id, pre-tokenized terms)` pairs with default k1/b.
    ///
    /// Documents are stored in ascending id order regardless of input order;
    /// ids must be unique. Zero-length documents are allowed (they simply
    /// never match).
    pub fn build<S: AsRef<str>>(docs: &[(i64, Vec<S>)]) -> Result<Bm25Index> {
        Self::build_with(docs, DEFAULT_K1, DEFAULT_B)
    }

    pub fn build_with<S: AsRef<str>>(docs: &[(i64, Vec<S>)], k1: f64, b: f64) -> Result<Bm25Index> {
        if docs.is_empty() {
            return Err(Error::validation("cannot build a BM25 index over zero documents"));
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by_key(|&i| docs[i].0);
        for w in order.windows(2) {
            if docs[w[0]].0 == docs[w[1]].0 {
                return Err(Error::validation(format!(
                    "duplicate document id {} in BM25 build",
                    docs[w[0]].0
                )));
            }
        }

        let mut term_ids: HashMap<String, u32> = HashMap::new();
        let mut postings: Vec<Vec<(u32, u32)>> = Vec::new();
        let mut doc_terms = Vec::with_capacity(docs.len());
        let mut doc_len = Vec::with_capacity(docs.len());
        let mut doc_ids = Vec::with_capacity(docs.len());

        for (slot, &i) in order.iter().enumerate() {
            let (id, terms) = &docs[i];
            doc_ids.push(*id);
            doc_len.push(terms.len() as u32);
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in terms {
                *tf.entry(t.as_ref()).or_insert(0) += 1;
            }
            let mut entry: Vec<(u32, u32)> = tf
                .into_iter()
                .map(|(t, c)| {
                    let next = term_ids.len() as u32;
                    let tid = *term_ids.entry(t.to_owned()).or_insert(next);
                    if tid as usize == postings.len() {
                        postings.push(Vec::new());
                    }
                    (tid, c)
                })
                .collect();
            entry.sort_unstable_by_key(|&(tid, _)| tid);
            for &(tid, c) in &entry {
                postings[tid as usize].push((slot as u32, c));
            }
            doc_terms.push(entry);
        }

        let slot_of = doc_ids.iter().enumerate().map(|(s, &id)| (id, s as u32)).collect();
        let total: u64 = doc_len.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_len.len() as f64;
        if avgdl == 0.0 {
            return Err(Error::validation("BM25 corpus has zero total length"));
        }
        Ok(Bm25Index { k1, b, term_ids, postings, doc_terms, doc_len, doc_ids, slot_of, avgdl })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_ids(&self) -> &[i64] {
        &self.doc_ids
    }

    fn idf(&self, term_id: u32) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.postings[term_id as usize].len() as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn tf_norm(&self, tf: u32, dl: u32) -> f64 {
        let tf = tf as f64;
        let dl = dl as f64;
        tf * (self.k1 + 1.0) / (tf + self.k1 * (1.0 - self.b + self.b * dl / self.avgdl))
    }

    /// BM25 score of one document for a query term multiset. Duplicate query
    /// terms contribute once each. Unknown document id is an error; terms
    /// absent from the corpus contribute zero.
    pub fn score(&self, query_terms: &[String], doc_id: i64) -> Result<f64> {
        let slot = *self
            .slot_of
            .get(&doc_id)
            .ok_or_else(|| Error::validation(format!("unknown document id {doc_id}")))?
            as usize;
        let terms = &self.doc_terms[slot];
        let mut score = 0.0;
        for q in query_terms {
            let Some(&tid) = self.term_ids.get(q.as_str()) else { continue };
            if let Ok(pos) = terms.binary_search_by_key(&tid, |&(t, _)| t) {
                score += self.idf(tid) * self.tf_norm(terms[pos].1, self.doc_len[slot]);
            }
        }
        Ok(score)
    }

    /// Scores for every document, by slot (ascending doc id). Accumulation
    /// order is fixed (query term order, postings order), so scores are
    /// bit-reproducible.
    pub fn score_all(&self, query_terms: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0f64; self.num_docs()];
        for q in query_terms {
            let Some(&tid) = self.term_ids.get(q.as_str()) else { continue };
            let idf = self.idf(tid);
            for &(slot, tf) in &self.postings[tid as usize] {
                scores[slot as usize] += idf * self.tf_norm(tf, self.doc_len[slot as usize]);
            }
        }
        scores
    }

    /// Scores for a batch of queries (data-parallel over queries).
    pub fn score_batch(&self, queries: &[Vec<String>]) -> Vec<Vec<f64>> {
        par::map_ordered(queries, |q| self.score_all(q))
    }

    /// Sequential reference for [`score_batch`] (bench baseline).
    pub fn score_batch_seq(&self, queries: &[Vec<String>]) -> Vec<Vec<f64>> {
        par::map_ordered_seq(queries, |q| self.score_all(q))
    }

    /// Top `k` documents with a nonzero score, ordered by descending score,
    /// ties broken by ascending document id.
    pub fn top_k(&self, query_terms: &[String], k: usize) -> Vec<(i64, f64)> {
        let scores = self.score_all(query_terms);
        let mut ranked: Vec<(u32, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(slot, &s)| (slot as u32, s))
            .collect();
        ranked.sort_unstable_by(|a, b| {
            b.1.total_cmp(&a.1).then_with(|| self.doc_ids[a.0 as usize].cmp(&self.doc_ids[b.0 as usize]))
        });
        ranked.truncate(k);
        ranked.into_iter().map(|(slot, s)| (self.doc_ids[slot as usize], s)).collect()
    }
}
