//! Immutable inverted index with collection statistics, BM25 and Dirichlet
//! query-likelihood scoring, and top-k retrieval.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::TokenizerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TermStats {
    pub df: u64,
    pub cf: u64,
}

/// Collection-level statistics. Documents are numbered in ascending `doc_id`
/// order, so internal document numbers sort the same way as ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    doc_count: u64,
    total_tokens: u64,
    terms: BTreeMap<String, TermStats>,
    doc_ids: Vec<String>,
    doc_lens: Vec<u64>,
}

impl IndexStats {
    pub fn doc_count(&self) -> u64 {
        self.doc_count
    }

    /// Total number of tokens in the collection.
    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.total_tokens as f64 / self.doc_count as f64
    }

    /// `(df, cf)` for a term; `(0, 0)` when the term is out of vocabulary.
    pub fn term_stats(&self, term: &str) -> (u64, u64) {
        self.terms.get(term).map(|s| (s.df, s.cf)).unwrap_or((0, 0))
    }

    pub fn contains_term(&self, term: &str) -> bool {
        self.terms.contains_key(term)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = (&str, &TermStats)> {
        self.terms.iter().map(|(t, s)| (t.as_str(), s))
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    /// Maximum-likelihood collection probability `cf / total_tokens`.
    pub fn collection_prob(&self, term: &str) -> f64 {
        let (_, cf) = self.term_stats(term);
        cf as f64 / self.total_tokens as f64
    }

    pub fn doc_number(&self, doc_id: &str) -> Option<usize> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
    }

    pub fn doc_id(&self, docno: usize) -> &str {
        &self.doc_ids[docno]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_len(&self, doc_id: &str) -> Option<u64> {
        self.doc_number(doc_id).map(|n| self.doc_lens[n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Per-term posting lists sorted by document number.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Postings {
    lists: BTreeMap<String, Vec<Posting>>,
}

impl Postings {
    pub fn get(&self, term: &str) -> &[Posting] {
        self.lists.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn tf(&self, term: &str, doc: u32) -> u32 {
        let list = self.get(term);
        list.binary_search_by_key(&doc, |p| p.doc)
            .map(|i| list[i].tf)
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.lists.iter().map(|(t, l)| (t.as_str(), l.as_slice()))
    }
}

/// Count of one term in one document; `term` is the term's rank in the
/// sorted vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermCount {
    pub term: u32,
    pub tf: u32,
}

/// Per-document term counts (the postings transposed), for predictors that
/// read whole document models. Derived on build and load, never stored.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardIndex {
    terms: Vec<String>,
    probs: Vec<f64>,
    docs: Vec<Vec<TermCount>>,
}

impl ForwardIndex {
    fn new(stats: &IndexStats, postings: &Postings) -> Self {
        let mut docs = vec![Vec::new(); stats.doc_count as usize];
        let mut terms = Vec::with_capacity(postings.lists.len());
        let mut probs = Vec::with_capacity(postings.lists.len());
        for (n, (term, list)) in postings.lists.iter().enumerate() {
            for p in list {
                docs[p.doc as usize].push(TermCount {
                    term: n as u32,
                    tf: p.tf,
                });
            }
            terms.push(term.clone());
            probs.push(stats.collection_prob(term));
        }
        Self { terms, probs, docs }
    }

    /// Term counts of a document, sorted by term number.
    pub fn doc(&self, docno: usize) -> &[TermCount] {
        &self.docs[docno]
    }

    pub fn term_number(&self, term: &str) -> Option<u32> {
        self.terms
            .binary_search_by(|t| t.as_str().cmp(term))
            .ok()
            .map(|n| n as u32)
    }

    pub fn term(&self, number: u32) -> &str {
        &self.terms[number as usize]
    }

    /// `P(t|C)` by term number.
    pub fn collection_prob(&self, number: u32) -> f64 {
        self.probs[number as usize]
    }

    /// Sorted counts of the in-vocabulary tokens; the rest are dropped.
    pub fn count<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TermCount> {
        let mut ids: Vec<u32> = tokens
            .iter()
            .filter_map(|t| self.term_number(t.as_ref()))
            .collect();
        ids.sort_unstable();
        ids.chunk_by(|a, b| a == b)
            .map(|run| TermCount {
                term: run[0],
                tf: run.len() as u32,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

pub const DEFAULT_QL_MU: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalModel {
    Bm25(Bm25Params),
    /// Dirichlet-smoothed query likelihood.
    QueryLikelihood {
        mu: f64,
    },
}

impl Default for RetrievalModel {
    fn default() -> Self {
        RetrievalModel::Bm25(Bm25Params::default())
    }
}

impl RetrievalModel {
    pub fn name(&self) -> &'static str {
        match self {
            RetrievalModel::Bm25(_) => "bm25",
            RetrievalModel::QueryLikelihood { .. } => "ql",
        }
    }

    pub fn from_name(name: &str, bm25: Bm25Params, mu: f64) -> Result<Self> {
        match name {
            "bm25" => Ok(RetrievalModel::Bm25(bm25)),
            "ql" => Ok(RetrievalModel::QueryLikelihood { mu }),
            other => Err(Error::UnknownName {
                kind: "retrieval model",
                name: other.to_string(),
                valid: "bm25, ql".to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// The ranked result list of one query variant of one information need.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub need_id: String,
    pub variant_id: String,
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn new(
        need_id: impl Into<String>,
        variant_id: impl Into<String>,
        entries: Vec<ScoredDoc>,
    ) -> Self {
        Self {
            need_id: need_id.into(),
            variant_id: variant_id.into(),
            entries,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Anything that can hand out a document's raw text by id.
pub trait DocTexts {
    fn text(&self, doc_id: &str) -> Option<&str>;
}

impl DocTexts for HashMap<String, String> {
    fn text(&self, doc_id: &str) -> Option<&str> {
        self.get(doc_id).map(String::as_str)
    }
}

impl DocTexts for BTreeMap<String, String> {
    fn text(&self, doc_id: &str) -> Option<&str> {
        self.get(doc_id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    tokenizer: TokenizerConfig,
    stats: IndexStats,
    postings: Postings,
    /// Document texts, parallel to `stats.doc_ids`.
    texts: Vec<String>,
    #[serde(default)]
    warnings: Vec<String>,
    #[serde(skip)]
    forward: ForwardIndex,
}

impl DocTexts for Index {
    fn text(&self, doc_id: &str) -> Option<&str> {
        self.stats
            .doc_number(doc_id)
            .map(|n| self.texts[n].as_str())
    }
}

const INDEX_FILE: &str = "index.json";

impl Index {
    pub fn build<I>(docs: I, tokenizer: &TokenizerConfig) -> Result<Self>
    where
        I: IntoIterator<Item = Document>,
    {
        let mut docs: Vec<Document> = docs.into_iter().collect();
        if docs.is_empty() {
            return Err(Error::param(
                "cannot build an index over an empty collection",
            ));
        }
        if let Some(d) = docs.iter().find(|d| d.doc_id.is_empty()) {
            return Err(Error::InvalidRecord {
                record: format!("document with text {:?}", truncate(&d.text, 40)),
                field: "id".into(),
                message: "empty document id".into(),
            });
        }
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        if let Some(w) = docs.windows(2).find(|w| w[0].doc_id == w[1].doc_id) {
            return Err(Error::DuplicateDocId(w[0].doc_id.clone()));
        }
        if docs.len() > u32::MAX as usize {
            return Err(Error::param(
                "collection too large for 32-bit document numbers",
            ));
        }

        let tok = tokenizer.build();
        let tokenized: Vec<Vec<String>> = docs.par_iter().map(|d| tok.tokenize(&d.text)).collect();

        let mut terms: BTreeMap<String, TermStats> = BTreeMap::new();
        let mut lists: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut warnings = Vec::new();
        let mut total_tokens = 0u64;

        for (docno, tokens) in tokenized.iter().enumerate() {
            if tokens.is_empty() {
                warnings.push(format!(
                    "document `{}` is empty after tokenization",
                    docs[docno].doc_id
                ));
            }
            doc_lens.push(tokens.len() as u64);
            total_tokens += tokens.len() as u64;

            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                let s = terms.entry(term.to_string()).or_default();
                s.df += 1;
                s.cf += count as u64;
                lists.entry(term.to_string()).or_default().push(Posting {
                    doc: docno as u32,
                    tf: count,
                });
            }
        }
        for w in &warnings {
            log::warn!("{w}");
        }
        if total_tokens == 0 {
            return Err(Error::param("collection contains no tokens"));
        }

        let (doc_ids, texts) = docs.into_iter().map(|d| (d.doc_id, d.text)).unzip();
        let stats = IndexStats {
            doc_count: doc_lens.len() as u64,
            total_tokens,
            terms,
            doc_ids,
            doc_lens,
        };
        let postings = Postings { lists };
        Ok(Self {
            tokenizer: tokenizer.clone(),
            forward: ForwardIndex::new(&stats, &postings),
            stats,
            postings,
            texts,
            warnings,
        })
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    pub fn postings(&self) -> &Postings {
        &self.postings
    }

    pub fn forward(&self) -> &ForwardIndex {
        &self.forward
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    /// Warnings raised while building (e.g. documents with no tokens).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenizer.build().tokenize(text)
    }

    pub fn term_stats(&self, term: &str) -> (u64, u64) {
        self.stats.term_stats(term)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(INDEX_FILE);
        let tmp = dir.join(format!("{INDEX_FILE}.tmp"));
        let bytes = serde_json::to_vec(self)?;
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut index: Index = serde_json::from_slice(&bytes)?;
        index.forward = ForwardIndex::new(&index.stats, &index.postings);
        Ok(index)
    }

    fn idf_bm25(&self, df: u64) -> f64 {
        let n = self.stats.doc_count as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn bm25_term(&self, params: Bm25Params, df: u64, tf: f64, dl: f64) -> f64 {
        let norm = params.k1 * (1.0 - params.b + params.b * dl / self.stats.avg_doc_len());
        self.idf_bm25(df) * tf * (params.k1 + 1.0) / (tf + norm)
    }

    fn docno(&self, doc_id: &str) -> Result<u32> {
        self.stats
            .doc_number(doc_id)
            .map(|n| n as u32)
            .ok_or_else(|| Error::UnknownDocId(doc_id.to_string()))
    }

    /// BM25 score of one document. Repeated query tokens each contribute.
    pub fn bm25_score<S: AsRef<str>>(
        &self,
        query: &[S],
        doc_id: &str,
        params: Bm25Params,
    ) -> Result<f64> {
        let docno = self.docno(doc_id)?;
        let dl = self.stats.doc_lens[docno as usize] as f64;
        let mut score = 0.0;
        for t in query {
            let t = t.as_ref();
            let (df, _) = self.stats.term_stats(t);
            let tf = self.postings.tf(t, docno);
            if df == 0 || tf == 0 {
                continue;
            }
            score += self.bm25_term(params, df, tf as f64, dl);
        }
        Ok(score)
    }

    /// Dirichlet-smoothed query log-likelihood of one document. OOV query
    /// terms are skipped.
    pub fn ql_score<S: AsRef<str>>(&self, query: &[S], doc_id: &str, mu: f64) -> Result<f64> {
        if mu.is_nan() || mu <= 0.0 {
            return Err(Error::param(format!("ql mu must be > 0, got {mu}")));
        }
        let docno = self.docno(doc_id)?;
        let dl = self.stats.doc_lens[docno as usize] as f64;
        let mut score = 0.0;
        for t in query {
            let t = t.as_ref();
            if !self.stats.contains_term(t) {
                continue;
            }
            let tf = self.postings.tf(t, docno) as f64;
            score += ((tf + mu * self.stats.collection_prob(t)) / (dl + mu)).ln();
        }
        Ok(score)
    }

    /// Top-`k` documents for the query, best first, ties by ascending id.
    ///
    /// Only documents containing at least one query term are candidates, and
    /// zero-score documents are dropped.
    pub fn retrieve<S: AsRef<str>>(
        &self,
        query: &[S],
        k: usize,
        model: RetrievalModel,
    ) -> Result<Vec<ScoredDoc>> {
        if k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        let n = self.stats.doc_count as usize;
        let mut matched = vec![false; n];
        let mut candidates: Vec<u32> = Vec::new();
        for t in query {
            for p in self.postings.get(t.as_ref()) {
                if !matched[p.doc as usize] {
                    matched[p.doc as usize] = true;
                    candidates.push(p.doc);
                }
            }
        }

        let mut hits: Vec<(u32, f64)> = match model {
            RetrievalModel::Bm25(params) => {
                let mut acc = vec![0.0f64; n];
                for t in query {
                    let t = t.as_ref();
                    let (df, _) = self.stats.term_stats(t);
                    for p in self.postings.get(t) {
                        let dl = self.stats.doc_lens[p.doc as usize] as f64;
                        acc[p.doc as usize] += self.bm25_term(params, df, p.tf as f64, dl);
                    }
                }
                candidates.iter().map(|&d| (d, acc[d as usize])).collect()
            }
            RetrievalModel::QueryLikelihood { mu } => {
                if mu.is_nan() || mu <= 0.0 {
                    return Err(Error::param(format!("ql mu must be > 0, got {mu}")));
                }
                candidates
                    .iter()
                    .map(|&d| {
                        let dl = self.stats.doc_lens[d as usize] as f64;
                        let mut s = 0.0;
                        for t in query {
                            let t = t.as_ref();
                            if !self.stats.contains_term(t) {
                                continue;
                            }
                            let tf = self.postings.tf(t, d) as f64;
                            s += ((tf + mu * self.stats.collection_prob(t)) / (dl + mu)).ln();
                        }
                        (d, s)
                    })
                    .collect()
            }
        };
        hits.retain(|&(_, s)| s != 0.0);
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(d, score)| ScoredDoc {
                doc_id: self.stats.doc_ids[d as usize].clone(),
                score,
            })
            .collect())
    }

    /// Score of the query against the whole collection treated as a single
    /// document (`tf = cf`, length = total tokens). OOV terms contribute 0.
    ///
    /// Under query likelihood the Dirichlet prior cancels, so the result is
    /// `Σ ln(cf/total)` for any `mu >= 0`.
    pub fn collection_score<S: AsRef<str>>(&self, query: &[S], model: RetrievalModel) -> f64 {
        let c_len = self.stats.total_tokens as f64;
        let mut score = 0.0;
        for t in query {
            let t = t.as_ref();
            let (df, cf) = self.stats.term_stats(t);
            if cf == 0 {
                continue;
            }
            score += match model {
                RetrievalModel::Bm25(params) => self.bm25_term(params, df, cf as f64, c_len),
                RetrievalModel::QueryLikelihood { mu } => {
                    let pc = cf as f64 / c_len;
                    ((cf as f64 + mu * pc) / (c_len + mu)).ln()
                }
            };
        }
        score
    }
}

fn truncate(s: &str, max: usize) -> String {
    s.chars().take(max).collect()
}

/// The four-document fixture shared across tests.
pub fn toy_corpus() -> Vec<Document> {
    vec![
        Document::new("D1", "a a b"),
        Document::new("D2", "a c"),
        Document::new("D3", "a b c d"),
        Document::new("D4", "d d"),
    ]
}
