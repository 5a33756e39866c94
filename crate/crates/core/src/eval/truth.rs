use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{ndcg_at_k, nugget_all, nugget_strict, recall_at_k, Gain, MetricName, NuggetWeights};
use crate::data_io::{NuggetJudgments, Qrels, TrueScoreRecord, VariantSet};
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Knobs shared by every ground-truth metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub gain: Gain,
    pub recall_threshold: u8,
    pub nugget_weights: NuggetWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gain: Gain::Linear,
            recall_threshold: 1,
            nugget_weights: NuggetWeights::default(),
        }
    }
}

fn metric_value(
    metric: MetricName,
    list: &RankedList,
    qrels: Option<&Qrels>,
    nuggets: Option<&NuggetJudgments>,
    cfg: &EvalConfig,
) -> Result<f64> {
    let need_qrels = || qrels.ok_or_else(|| Error::param(format!("metric {metric} needs qrels")));
    let need_nuggets =
        || nuggets.ok_or_else(|| Error::param(format!("metric {metric} needs nugget judgments")));
    match metric {
        MetricName::Ndcg(k) => ndcg_at_k(list, need_qrels()?, k, cfg.gain),
        MetricName::Recall(k) => recall_at_k(list, need_qrels()?, k, cfg.recall_threshold),
        MetricName::NuggetAll => nugget_all(
            need_nuggets()?,
            &list.need_id,
            &list.variant_id,
            &cfg.nugget_weights,
        ),
        MetricName::NuggetStrict => nugget_strict(need_nuggets()?, &list.need_id, &list.variant_id),
    }
}

/// One record per (need, variant, metric) whose value is defined.
///
/// The (need, variant) pairs are those of `runs` plus any listed in
/// `variants`; a variant without a run is evaluated as an empty ranking.
/// Undefined values are left out, never written as zero.
pub fn truth_table(
    runs: &[RankedList],
    qrels: Option<&Qrels>,
    nuggets: Option<&NuggetJudgments>,
    variants: Option<&[VariantSet]>,
    metrics: &[MetricName],
    cfg: &EvalConfig,
) -> Result<Vec<TrueScoreRecord>> {
    let mut lists: BTreeMap<(&str, &str), RankedList> = runs
        .iter()
        .map(|l| ((l.need_id.as_str(), l.variant_id.as_str()), l.clone()))
        .collect();
    for set in variants.unwrap_or_default() {
        for v in &set.variants {
            lists
                .entry((v.need_id.as_str(), v.variant_id.as_str()))
                .or_insert_with(|| {
                    RankedList::new(v.need_id.clone(), v.variant_id.clone(), vec![])
                });
        }
    }

    let per_list: Vec<Vec<TrueScoreRecord>> = lists
        .into_par_iter()
        .map(|(_, list)| {
            let mut out = Vec::new();
            for &metric in metrics {
                match metric_value(metric, &list, qrels, nuggets, cfg) {
                    Ok(value) => out.push(TrueScoreRecord {
                        need_id: list.need_id.clone(),
                        variant_id: list.variant_id.clone(),
                        metric: metric.to_string(),
                        value,
                    }),
                    Err(e) if e.is_undefined() => {
                        log::debug!("{}.{} {metric}: {e}", list.need_id, list.variant_id)
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<TrueScoreRecord> = per_list.into_iter().flatten().collect();
    records.sort_by(|a, b| {
        (&a.need_id, &a.variant_id, &a.metric).cmp(&(&b.need_id, &b.variant_id, &b.metric))
    });
    Ok(records)
}
