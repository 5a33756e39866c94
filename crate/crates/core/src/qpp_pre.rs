//! Pre-retrieval predictors: functions of the query text, collection
//! statistics and (for the embedding-based ones) query vectors. Natural
//! logarithms throughout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::data_io::{EmbeddingStore, HistoryEntry};
use crate::error::{Error, Result};
use crate::index::IndexStats;
use crate::stats::{cosine, mean, population_std};

/// How per-term values are folded into one query-level score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Aggregator {
    Avg,
    Max,
    Sum,
    Std,
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Aggregator::Avg => mean(values),
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::Sum => values.iter().sum(),
            Aggregator::Std => population_std(values),
        }
    }

    pub fn suffix(self) -> &'static str {
        match self {
            Aggregator::Avg => "avg",
            Aggregator::Max => "max",
            Aggregator::Sum => "sum",
            Aggregator::Std => "std",
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.suffix())
    }
}

impl FromStr for Aggregator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Aggregator::Avg),
            "max" => Ok(Aggregator::Max),
            "sum" => Ok(Aggregator::Sum),
            "std" => Ok(Aggregator::Std),
            other => Err(Error::UnknownName {
                kind: "aggregator",
                name: other.into(),
                valid: "avg, max, sum, std".into(),
            }),
        }
    }
}

/// In-vocabulary query terms with their query frequency, in sorted order so
/// aggregates do not depend on token order.
fn in_vocab_terms<'q, S: AsRef<str>>(
    query: &'q [S],
    stats: &IndexStats,
) -> Result<BTreeMap<&'q str, u32>> {
    let mut terms = BTreeMap::new();
    for t in query {
        let t = t.as_ref();
        if stats.contains_term(t) {
            *terms.entry(t).or_insert(0) += 1;
        }
    }
    if terms.is_empty() {
        return Err(Error::undefined("query has no in-vocabulary terms"));
    }
    Ok(terms)
}

fn per_term<S, F>(query: &[S], stats: &IndexStats, f: F) -> Result<Vec<f64>>
where
    S: AsRef<str>,
    F: Fn(u64, u64) -> f64,
{
    Ok(in_vocab_terms(query, stats)?
        .keys()
        .map(|t| {
            let (df, cf) = stats.term_stats(t);
            f(df, cf)
        })
        .collect())
}

/// `ln(N / df)` per distinct in-vocabulary term, aggregated.
pub fn idf<S: AsRef<str>>(query: &[S], stats: &IndexStats, agg: Aggregator) -> Result<f64> {
    let n = stats.doc_count() as f64;
    let v = per_term(query, stats, |df, _| (n / df as f64).ln())?;
    Ok(agg.apply(&v))
}

/// `ln(total_tokens / cf)` per distinct in-vocabulary term, aggregated.
pub fn ictf<S: AsRef<str>>(query: &[S], stats: &IndexStats, agg: Aggregator) -> Result<f64> {
    let c = stats.total_tokens() as f64;
    let v = per_term(query, stats, |_, cf| (c / cf as f64).ln())?;
    Ok(agg.apply(&v))
}

/// `(1 + ln cf) · ln(1 + N / df)` per distinct in-vocabulary term, aggregated.
pub fn scq<S: AsRef<str>>(query: &[S], stats: &IndexStats, agg: Aggregator) -> Result<f64> {
    let n = stats.doc_count() as f64;
    let v = per_term(query, stats, |df, cf| {
        (1.0 + (cf as f64).ln()) * (1.0 + n / df as f64).ln()
    })?;
    Ok(agg.apply(&v))
}

/// Simplified clarity, approximate form: `ln(1/|q|) + avg ictf`, with `|q|`
/// the number of in-vocabulary query tokens.
pub fn scs_apx<S: AsRef<str>>(query: &[S], stats: &IndexStats) -> Result<f64> {
    let terms = in_vocab_terms(query, stats)?;
    let len: u32 = terms.values().sum();
    Ok((1.0 / len as f64).ln() + ictf(query, stats, Aggregator::Avg)?)
}

/// Simplified clarity as the KL divergence between the query's maximum
/// likelihood language model and the collection model.
pub fn scs_full<S: AsRef<str>>(query: &[S], stats: &IndexStats) -> Result<f64> {
    let terms = in_vocab_terms(query, stats)?;
    let len: u32 = terms.values().sum();
    let c = stats.total_tokens() as f64;
    Ok(terms
        .iter()
        .map(|(t, &qtf)| {
            let p_q = qtf as f64 / len as f64;
            let p_c = stats.term_stats(t).1 as f64 / c;
            p_q * (p_q / p_c).ln()
        })
        .sum())
}

/// Negative log-likelihood of the query under the add-one smoothed
/// collection model, summed over every token (OOV included). Empty query
/// gives 0.
pub fn ql_pre<S: AsRef<str>>(query: &[S], stats: &IndexStats) -> f64 {
    let c = stats.total_tokens() as f64;
    -query
        .iter()
        .map(|t| {
            let (_, cf) = stats.term_stats(t.as_ref());
            ((cf as f64 + 1.0) / (c + 1.0)).ln()
        })
        .sum::<f64>()
}

/// Mean cosine similarity between the query vector and the reference vectors.
pub fn dm(query_id: &str, store: &EmbeddingStore, references: &[Vec<f64>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::param("dm needs at least one reference vector"));
    }
    if let Some(r) = references.iter().find(|r| r.len() != store.dim()) {
        return Err(Error::param(format!(
            "reference dimension {} != embedding dimension {}",
            r.len(),
            store.dim()
        )));
    }
    let q = store
        .get(query_id)
        .ok_or_else(|| Error::undefined(format!("no embedding for `{query_id}`")))?;
    Ok(references.iter().map(|r| cosine(q, r)).sum::<f64>() / references.len() as f64)
}

/// The `k` history entries most cosine-similar to `query`, excluding entries
/// with the same id. Ties go to the smaller id.
pub(crate) fn nearest<'h>(
    query_id: &str,
    query: &[f64],
    history: &'h [HistoryEntry],
    k: usize,
) -> Result<Vec<(&'h HistoryEntry, f64)>> {
    if k == 0 {
        return Err(Error::param("neighbor count k must be >= 1"));
    }
    if let Some(h) = history.iter().find(|h| h.embedding.len() != query.len()) {
        return Err(Error::param(format!(
            "history entry `{}` has dimension {} != {}",
            h.query_id,
            h.embedding.len(),
            query.len()
        )));
    }
    let mut scored: Vec<(&HistoryEntry, f64)> = history
        .iter()
        .filter(|h| h.query_id != query_id)
        .map(|h| (h, cosine(query, &h.embedding)))
        .collect();
    if scored.is_empty() {
        return Err(Error::undefined("query history is empty"));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.query_id.cmp(&b.0.query_id)));
    scored.truncate(k);
    Ok(scored)
}

/// Weighted mean of neighbor effectiveness; unweighted if all weights are 0.
pub(crate) fn interpolate(neighbors: &[(f64, f64)]) -> f64 {
    let total: f64 = neighbors.iter().map(|(w, _)| w).sum();
    if total > 0.0 {
        neighbors.iter().map(|(w, e)| w * e).sum::<f64>() / total
    } else {
        neighbors.iter().map(|(_, e)| e).sum::<f64>() / neighbors.len() as f64
    }
}

/// Query-space interpolation: effectiveness of the `k` nearest historical
/// queries, weighted by their (non-negative) cosine similarity.
pub fn qsd_pre(
    query_id: &str,
    store: &EmbeddingStore,
    history: &[HistoryEntry],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("neighbor count k must be >= 1"));
    }
    let q = store
        .get(query_id)
        .ok_or_else(|| Error::undefined(format!("no embedding for `{query_id}`")))?;
    let neighbors = nearest(query_id, q, history, k)?;
    let weighted: Vec<(f64, f64)> = neighbors
        .iter()
        .map(|(h, cos)| (cos.max(0.0), h.effectiveness))
        .collect();
    Ok(interpolate(&weighted))
}

/// Deterministic k-means centroids (farthest-first seeding, Lloyd updates),
/// for building the reference set used by [`dm`].
pub fn kmeans_centroids(
    vectors: &[Vec<f64>],
    k: usize,
    iterations: usize,
) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    if vectors.is_empty() {
        return Err(Error::param("no vectors to cluster"));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::param("vectors have mixed dimensions"));
    }
    let dist2 =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };

    let k = k.min(vectors.len());
    let mut centroids = vec![vectors[0].clone()];
    while centroids.len() < k {
        let (idx, _) = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = centroids
                    .iter()
                    .map(|c| dist2(v, c))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .fold((0, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        centroids.push(vectors[idx].clone());
    }

    let mut assignment = vec![usize::MAX; vectors.len()];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, v) in vectors.iter().enumerate() {
            let best = (0..k)
                .min_by(|&a, &b| dist2(v, &centroids[a]).total_cmp(&dist2(v, &centroids[b])))
                .unwrap();
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = vectors
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == c)
                .map(|(v, _)| v)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, x) in centroid.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    Ok(centroids)
}
