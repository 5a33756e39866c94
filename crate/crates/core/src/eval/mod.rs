//! Ground-truth effectiveness of query variants and correlation statistics.

mod correlation;
mod nugget;
mod retrieval;
mod truth;

pub use correlation::{kendall_tau, pearson, CorrelationMethod, CorrelationResult};
pub use nugget::{nugget_all, nugget_strict, NuggetWeights};
pub use retrieval::{ndcg_at_k, recall_at_k, Gain};
pub use truth::{truth_table, EvalConfig};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricName {
    Ndcg(usize),
    Recall(usize),
    NuggetAll,
    NuggetStrict,
}

impl MetricName {
    pub const DEFAULTS: [MetricName; 4] = [
        MetricName::NuggetAll,
        MetricName::NuggetStrict,
        MetricName::Ndcg(5),
        MetricName::Recall(100),
    ];

    pub fn is_nugget(self) -> bool {
        matches!(self, MetricName::NuggetAll | MetricName::NuggetStrict)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricName::Ndcg(k) => write!(f, "ndcg@{k}"),
            MetricName::Recall(k) => write!(f, "recall@{k}"),
            MetricName::NuggetAll => f.write_str("nugget_all"),
            MetricName::NuggetStrict => f.write_str("nugget_strict"),
        }
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let unknown = || Error::UnknownName {
            kind: "metric",
            name: s.to_string(),
            valid: "ndcg@<k>, recall@<k>, nugget_all, nugget_strict".into(),
        };
        let depth = |k: &str| -> Result<usize, Error> {
            match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(k),
                _ => Err(unknown()),
            }
        };
        match s {
            "nugget_all" => Ok(MetricName::NuggetAll),
            "nugget_strict" => Ok(MetricName::NuggetStrict),
            _ => {
                if let Some(k) = s.strip_prefix("ndcg@") {
                    Ok(MetricName::Ndcg(depth(k)?))
                } else if let Some(k) = s.strip_prefix("recall@") {
                    Ok(MetricName::Recall(depth(k)?))
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names_round_trip() {
        for m in MetricName::DEFAULTS {
            assert_eq!(m.to_string().parse::<MetricName>().unwrap(), m);
        }
        assert_eq!(
            "ndcg@10".parse::<MetricName>().unwrap(),
            MetricName::Ndcg(10)
        );
        let err = "map@10".parse::<MetricName>().unwrap_err();
        assert!(err.to_string().contains("nugget_strict"));
        assert!("ndcg@0".parse::<MetricName>().is_err());
    }
}
