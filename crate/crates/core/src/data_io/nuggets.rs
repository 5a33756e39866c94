use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Importance {
    Vital,
    Okay,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Support {
    Full,
    Partial,
    None,
}

impl Importance {
    pub const LABELS: [&'static str; 2] = ["vital", "okay"];

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "vital" => Some(Importance::Vital),
            "okay" => Some(Importance::Okay),
            _ => None,
        }
    }
}

impl Support {
    pub const LABELS: [&'static str; 3] = ["full", "partial", "none"];

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Support::Full),
            "partial" => Some(Support::Partial),
            "none" => Some(Support::None),
            _ => None,
        }
    }
}

impl fmt::Display for Importance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Importance::Vital => "vital",
            Importance::Okay => "okay",
        })
    }
}

impl fmt::Display for Support {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Support::Full => "full",
            Support::Partial => "partial",
            Support::None => "none",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nugget {
    pub id: String,
    pub importance: Importance,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NeedNuggets {
    pub nuggets: Vec<Nugget>,
    /// variant id → nugget id → support level of that variant's answer.
    pub supports: BTreeMap<String, BTreeMap<String, Support>>,
}

impl NeedNuggets {
    /// Support of a nugget in a variant's answer; absent entries are `None`.
    pub fn support(&self, variant_id: &str, nugget_id: &str) -> Support {
        self.supports
            .get(variant_id)
            .and_then(|m| m.get(nugget_id))
            .copied()
            .unwrap_or(Support::None)
    }

    pub fn has_variant(&self, variant_id: &str) -> bool {
        self.supports.contains_key(variant_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NuggetJudgments {
    pub needs: BTreeMap<String, NeedNuggets>,
}

impl NuggetJudgments {
    pub fn need(&self, need_id: &str) -> Option<&NeedNuggets> {
        self.needs.get(need_id)
    }
}

#[derive(Serialize, Deserialize)]
struct RawNugget {
    id: String,
    importance: String,
    #[serde(default)]
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawNeed {
    need_id: String,
    nuggets: Vec<RawNugget>,
    #[serde(default)]
    supports: BTreeMap<String, BTreeMap<String, String>>,
}

fn allowed(labels: &[&str]) -> String {
    format!("{{{}}}", labels.join(", "))
}

/// Parse the nugget-judgment JSON array.
pub fn parse_nuggets(text: &str) -> Result<NuggetJudgments> {
    let raw: Vec<RawNeed> = serde_json::from_str(text)?;
    let mut out = NuggetJudgments::default();
    for need in raw {
        let mut nuggets = Vec::with_capacity(need.nuggets.len());
        let mut ids = BTreeSet::new();
        for n in need.nuggets {
            let importance =
                Importance::from_label(&n.importance).ok_or_else(|| Error::InvalidRecord {
                    record: format!("need {}, nugget {}", need.need_id, n.id),
                    field: "importance".into(),
                    message: format!(
                        "unknown label `{}`; allowed: {}",
                        n.importance,
                        allowed(&Importance::LABELS)
                    ),
                })?;
            if !ids.insert(n.id.clone()) {
                return Err(Error::InvalidRecord {
                    record: format!("need {}, nugget {}", need.need_id, n.id),
                    field: "id".into(),
                    message: "duplicate nugget id".into(),
                });
            }
            nuggets.push(Nugget {
                id: n.id,
                importance,
                text: n.text,
            });
        }

        let mut supports = BTreeMap::new();
        for (variant, per_nugget) in need.supports {
            let mut m = BTreeMap::new();
            for (nugget_id, label) in per_nugget {
                let record = format!(
                    "need {}, variant {variant}, nugget {nugget_id}",
                    need.need_id
                );
                if !ids.contains(&nugget_id) {
                    return Err(Error::InvalidRecord {
                        record,
                        field: "supports".into(),
                        message: "references an undeclared nugget".into(),
                    });
                }
                let support = Support::from_label(&label).ok_or_else(|| Error::InvalidRecord {
                    record: record.clone(),
                    field: "support".into(),
                    message: format!(
                        "unknown label `{label}`; allowed: {}",
                        allowed(&Support::LABELS)
                    ),
                })?;
                m.insert(nugget_id, support);
            }
            supports.insert(variant, m);
        }

        if out
            .needs
            .insert(need.need_id.clone(), NeedNuggets { nuggets, supports })
            .is_some()
        {
            return Err(Error::InvalidRecord {
                record: format!("need {}", need.need_id),
                field: "need_id".into(),
                message: "duplicate need".into(),
            });
        }
    }
    Ok(out)
}

pub fn write_nuggets(judgments: &NuggetJudgments) -> Result<String> {
    let raw: Vec<RawNeed> = judgments
        .needs
        .iter()
        .map(|(need_id, n)| RawNeed {
            need_id: need_id.clone(),
            nuggets: n
                .nuggets
                .iter()
                .map(|g| RawNugget {
                    id: g.id.clone(),
                    importance: g.importance.to_string(),
                    text: g.text.clone(),
                })
                .collect(),
            supports: n
                .supports
                .iter()
                .map(|(v, m)| {
                    (
                        v.clone(),
                        m.iter().map(|(g, s)| (g.clone(), s.to_string())).collect(),
                    )
                })
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}
