use crate::data_io::Qrels;
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Gain applied to a relevance grade in DCG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn of(self, grade: u8) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => (1u32 << grade) as f64 - 1.0,
        }
    }
}

fn discount(rank0: usize) -> f64 {
    (rank0 as f64 + 2.0).log2()
}

/// nDCG@k with unjudged documents as grade 0 and the ideal ranking taken from
/// every judged document of the need.
pub fn ndcg_at_k(list: &RankedList, qrels: &Qrels, k: usize, gain: Gain) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    let judged = qrels
        .judgments(&list.need_id)
        .ok_or_else(|| Error::undefined(format!("need `{}` has no judgments", list.need_id)))?;
    let mut ideal: Vec<u8> = judged.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.of(g) / discount(i))
        .sum();
    if idcg == 0.0 {
        return Err(Error::undefined(format!(
            "need `{}` has no relevant documents",
            list.need_id
        )));
    }
    let dcg: f64 = list
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.of(qrels.grade(&list.need_id, d)) / discount(i))
        .sum();
    Ok(dcg / idcg)
}

/// Fraction of the need's documents with grade >= `threshold` that appear in
/// the top k.
pub fn recall_at_k(list: &RankedList, qrels: &Qrels, k: usize, threshold: u8) -> Result<f64> {
    if k == 0 {
        return Err(Error::param("k must be >= 1"));
    }
    let threshold = threshold.max(1);
    let judged = qrels
        .judgments(&list.need_id)
        .ok_or_else(|| Error::undefined(format!("need `{}` has no judgments", list.need_id)))?;
    let relevant = judged.values().filter(|&&g| g >= threshold).count();
    if relevant == 0 {
        return Err(Error::undefined(format!(
            "need `{}` has no documents with grade >= {threshold}",
            list.need_id
        )));
    }
    let found = list
        .doc_ids()
        .take(k)
        .filter(|d| judged.get(*d).is_some_and(|&g| g >= threshold))
        .count();
    Ok(found as f64 / relevant as f64)
}
