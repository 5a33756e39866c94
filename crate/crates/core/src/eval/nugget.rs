use serde::{Deserialize, Serialize};

use crate::data_io::{Importance, NeedNuggets, NuggetJudgments, Support};
use crate::error::{Error, Result};

/// Credit given to each support level in the lenient nugget score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuggetWeights {
    pub full: f64,
    pub partial: f64,
    pub none: f64,
}

impl Default for NuggetWeights {
    fn default() -> Self {
        Self {
            full: 1.0,
            partial: 0.5,
            none: 0.0,
        }
    }
}

impl NuggetWeights {
    pub fn weight(&self, s: Support) -> f64 {
        match s {
            Support::Full => self.full,
            Support::Partial => self.partial,
            Support::None => self.none,
        }
    }
}

fn judged_need<'a>(
    judgments: &'a NuggetJudgments,
    need_id: &str,
    variant_id: &str,
) -> Result<&'a NeedNuggets> {
    let need = judgments
        .need(need_id)
        .ok_or_else(|| Error::undefined(format!("need `{need_id}` has no nugget judgments")))?;
    if !need.has_variant(variant_id) {
        return Err(Error::undefined(format!(
            "no nugget supports for ({need_id}, {variant_id})"
        )));
    }
    Ok(need)
}

/// Mean support weight over every nugget of the need.
pub fn nugget_all(
    judgments: &NuggetJudgments,
    need_id: &str,
    variant_id: &str,
    weights: &NuggetWeights,
) -> Result<f64> {
    let need = judged_need(judgments, need_id, variant_id)?;
    if need.nuggets.is_empty() {
        return Err(Error::undefined(format!("need `{need_id}` has no nuggets")));
    }
    let total: f64 = need
        .nuggets
        .iter()
        .map(|n| weights.weight(need.support(variant_id, &n.id)))
        .sum();
    Ok(total / need.nuggets.len() as f64)
}

/// Fraction of vital nuggets with full support.
pub fn nugget_strict(judgments: &NuggetJudgments, need_id: &str, variant_id: &str) -> Result<f64> {
    let need = judged_need(judgments, need_id, variant_id)?;
    let vital: Vec<_> = need
        .nuggets
        .iter()
        .filter(|n| n.importance == Importance::Vital)
        .collect();
    if vital.is_empty() {
        return Err(Error::undefined(format!(
            "need `{need_id}` has no vital nuggets"
        )));
    }
    let full = vital
        .iter()
        .filter(|n| need.support(variant_id, &n.id) == Support::Full)
        .count();
    Ok(full as f64 / vital.len() as f64)
}
