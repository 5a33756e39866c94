//! Post-retrieval predictors over ranked result lists.
//!
//! Score-distribution predictors look only at the top-k retrieval scores;
//! clarity additionally needs document text and collection statistics, and
//! the query-space predictor needs embeddings and a query history.

use std::collections::BTreeSet;

use crate::data_io::{EmbeddingStore, HistoryEntry};
use crate::error::{Error, Result};
use crate::index::{
    DocTexts, ForwardIndex, Index, RankedList, RetrievalModel, ScoredDoc, TermCount,
};
use crate::qpp_pre::{interpolate, nearest};
use crate::stats::{mean, population_std, scaled_mad};

/// Retrieval scores in rank order (non-increasing, finite).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreList(Vec<f64>);

impl ScoreList {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::param(format!(
                "score at rank {} is not finite",
                i + 1
            )));
        }
        if let Some(i) = scores.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::param(format!(
                "scores increase between ranks {} and {}",
                i + 1,
                i + 2
            )));
        }
        Ok(Self(scores))
    }

    pub fn from_ranked(list: &RankedList) -> Result<Self> {
        Self::new(list.scores())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The first `k` scores (clipped to the list length).
    pub fn top(&self, k: usize) -> Result<&[f64]> {
        if k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        if self.0.is_empty() {
            return Err(Error::undefined("empty ranked list"));
        }
        Ok(&self.0[..k.min(self.0.len())])
    }
}

/// Statistics used by the normalized predictor variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationContext {
    /// Mean score over the full list.
    pub mean_score: f64,
    /// Score of the query against the collection as one document; the list
    /// mean stands in when no index is available.
    pub collection_score: f64,
}

impl NormalizationContext {
    pub fn new(list: &ScoreList, collection_score: Option<f64>) -> Self {
        let mean_score = mean(list.as_slice());
        Self {
            mean_score,
            collection_score: collection_score.unwrap_or(mean_score),
        }
    }

    fn abs_collection(&self) -> Result<f64> {
        let s = self.collection_score.abs();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::undefined("collection score is zero"));
        }
        Ok(s)
    }
}

/// Standard deviation of the top-k scores; normalized divides by `|s_C|`.
pub fn nqc(
    list: &ScoreList,
    k: usize,
    normalized: bool,
    ctx: &NormalizationContext,
) -> Result<f64> {
    let sd = population_std(list.top(k)?);
    if normalized {
        Ok(sd / ctx.abs_collection()?)
    } else {
        Ok(sd)
    }
}

/// Weighted information gain: mean gap between the top-k scores and the
/// collection score, scaled by `1/sqrt(query_len)`. Normalized rescales all
/// scores by the list mean first.
pub fn wig(
    list: &ScoreList,
    query_len: usize,
    k: usize,
    normalized: bool,
    ctx: &NormalizationContext,
) -> Result<f64> {
    if query_len == 0 {
        return Err(Error::param("query length must be >= 1"));
    }
    let top = list.top(k)?;
    let scale = if normalized {
        if ctx.mean_score == 0.0 {
            return Err(Error::undefined("mean score is zero"));
        }
        ctx.mean_score
    } else {
        1.0
    };
    let s_c = ctx.collection_score / scale;
    let gain: f64 = top.iter().map(|s| s / scale - s_c).sum();
    Ok(gain / (top.len() as f64 * (query_len as f64).sqrt()))
}

/// Score magnitude and variance: `(1/k) Σ s_i |ln(s_i / mean)|` over the top
/// k. Scores must share one sign.
pub fn smv(
    list: &ScoreList,
    k: usize,
    normalized: bool,
    ctx: &NormalizationContext,
) -> Result<f64> {
    let top = list.top(k)?;
    let mu = mean(top);
    if mu == 0.0 {
        return Err(Error::undefined("top-k mean score is zero"));
    }
    if top.iter().any(|s| s / mu < 0.0) {
        return Err(Error::undefined("top-k scores change sign"));
    }
    let v = top
        .iter()
        .map(|&s| {
            if s == 0.0 {
                0.0
            } else {
                s * (s / mu).ln().abs()
            }
        })
        .sum::<f64>()
        / top.len() as f64;
    if normalized {
        Ok(v / ctx.abs_collection()?)
    } else {
        Ok(v)
    }
}

/// Largest standard deviation over the prefixes `s_1..s_i`, `i <= k`.
pub fn sigma_max(list: &ScoreList, k: usize) -> Result<f64> {
    let top = list.top(k)?;
    // Welford running moments, one pass over the prefixes.
    let (mut m, mut m2, mut best) = (0.0f64, 0.0f64, 0.0f64);
    for (i, &s) in top.iter().enumerate() {
        let n = (i + 1) as f64;
        let d = s - m;
        m += d / n;
        m2 += d * (s - m);
        best = best.max((m2 / n).max(0.0).sqrt());
    }
    Ok(best)
}

/// Standard deviation over the documents scoring at least half the top
/// score. Undefined when the top score is not positive.
pub fn sigma_half(list: &ScoreList) -> Result<f64> {
    let s = list.as_slice();
    let first = *s
        .first()
        .ok_or_else(|| Error::undefined("empty ranked list"))?;
    if first <= 0.0 {
        return Err(Error::undefined("top score is not positive"));
    }
    let cut = s.iter().take_while(|&&x| x >= 0.5 * first).count();
    Ok(population_std(&s[..cut]))
}

/// Robust spread of the top-k scores: consistency-scaled median absolute
/// deviation.
pub fn rsd(list: &ScoreList, k: usize) -> Result<f64> {
    Ok(scaled_mad(list.top(k)?).expect("top() is non-empty"))
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Clarity: KL divergence between the relevance model of the top-k documents
/// and the collection model.
///
/// Document weights are the softmax of the retrieval scores; document models
/// are Dirichlet smoothed with `mu` (`mu = 0` gives maximum likelihood).
/// Document text is tokenized with the index's tokenizer and terms outside
/// the index vocabulary are dropped.
pub fn clarity<D: DocTexts + ?Sized>(
    list: &RankedList,
    docs: &D,
    index: &Index,
    k: usize,
    mu: f64,
) -> Result<f64> {
    let top = clarity_top(list, k, mu)?;
    let forward = index.forward();
    let counts = top
        .iter()
        .map(|e| {
            let text = docs
                .text(&e.doc_id)
                .ok_or_else(|| Error::MissingDocText(e.doc_id.clone()))?;
            Ok(forward.count(&index.tokenize(text)))
        })
        .collect::<Result<Vec<_>>>()?;
    let counts: Vec<&[TermCount]> = counts.iter().map(Vec::as_slice).collect();
    Ok(relevance_kl(top, &counts, forward, mu))
}

/// [`clarity`] for documents of the index itself, reading the stored term
/// counts instead of re-tokenizing text. Same value, bit for bit.
pub fn clarity_indexed(list: &RankedList, index: &Index, k: usize, mu: f64) -> Result<f64> {
    let top = clarity_top(list, k, mu)?;
    let forward = index.forward();
    let counts = top
        .iter()
        .map(|e| {
            index
                .stats()
                .doc_number(&e.doc_id)
                .map(|n| forward.doc(n))
                .ok_or_else(|| Error::MissingDocText(e.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(relevance_kl(top, &counts, forward, mu))
}

fn clarity_top(list: &RankedList, k: usize, mu: f64) -> Result<&[ScoredDoc]> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if !mu.is_finite() || mu < 0.0 {
        return Err(Error::param(format!(
            "smoothing mu must be finite and >= 0, got {mu}"
        )));
    }
    let top = &list.entries[..k.min(list.entries.len())];
    if top.is_empty() {
        return Err(Error::undefined("empty ranked list"));
    }
    Ok(top)
}

fn relevance_kl(
    top: &[ScoredDoc],
    counts: &[&[TermCount]],
    forward: &ForwardIndex,
    mu: f64,
) -> f64 {
    let weights = softmax(&top.iter().map(|e| e.score).collect::<Vec<_>>());

    // P(w|R) = background · P(w|C) + Σ_d π_d tf(w,d) / (|d| + mu)
    let mut background = 0.0;
    let mut direct: Vec<(u32, f64)> = Vec::new();
    for (doc, pi) in counts.iter().zip(&weights) {
        let dl: u32 = doc.iter().map(|c| c.tf).sum();
        let denom = dl as f64 + mu;
        if denom == 0.0 {
            // Empty document with no smoothing: fall back to the collection model.
            background += pi;
            continue;
        }
        background += pi * mu / denom;
        direct.extend(doc.iter().map(|c| (c.term, pi * c.tf as f64 / denom)));
    }
    // Stable, so each term's mass is summed in rank order.
    direct.sort_by_key(|d| d.0);

    let mut kl = 0.0;
    let mut covered = 0.0;
    for run in direct.chunk_by(|a, b| a.0 == b.0) {
        let b = run.iter().fold(0.0, |acc, d| acc + d.1);
        let pc = forward.collection_prob(run[0].0);
        let pr = background * pc + b;
        covered += pc;
        kl += pr * (pr / pc).ln();
    }
    // Terms absent from every top document share the ratio `background`.
    if background > 0.0 {
        kl += background * background.ln() * (1.0 - covered).max(0.0);
    }
    kl
}

fn jaccard(a: &BTreeSet<&str>, b: &BTreeSet<String>) -> f64 {
    let union = a.len() + b.len();
    if union == 0 {
        return 1.0;
    }
    let inter = b.iter().filter(|d| a.contains(d.as_str())).count();
    inter as f64 / (union - inter) as f64
}

/// Query-space interpolation refined by result overlap: each of the `k`
/// nearest neighbors is weighted by `max(cos, 0)` times the Jaccard overlap
/// between the query's top `k_docs` documents and the neighbor's recorded
/// top documents (overlap 1 when the neighbor has none recorded).
pub fn qsd_post(
    query_id: &str,
    store: &EmbeddingStore,
    history: &[HistoryEntry],
    list: &RankedList,
    k_neighbors: usize,
    k_docs: usize,
) -> Result<f64> {
    if k_neighbors == 0 || k_docs == 0 {
        return Err(Error::param("neighbor and document counts must be >= 1"));
    }
    if list.is_empty() {
        return Err(Error::undefined("empty ranked list"));
    }
    let q = store
        .get(query_id)
        .ok_or_else(|| Error::undefined(format!("no embedding for `{query_id}`")))?;
    let own: BTreeSet<&str> = list.doc_ids().take(k_docs).collect();
    let neighbors = nearest(query_id, q, history, k_neighbors)?;
    let weighted: Vec<(f64, f64)> = neighbors
        .iter()
        .map(|(h, cos)| {
            let overlap = h.top_docs.as_ref().map_or(1.0, |d| jaccard(&own, d));
            (cos.max(0.0) * overlap, h.effectiveness)
        })
        .collect();
    Ok(interpolate(&weighted))
}

/// Retrieval score of the query against the whole collection as a single
/// document; the `s_C` normalizer.
pub fn collection_score<S: AsRef<str>>(query: &[S], index: &Index, model: RetrievalModel) -> f64 {
    index.collection_score(query, model)
}
