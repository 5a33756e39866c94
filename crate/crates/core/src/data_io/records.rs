use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{data_lines, parse_f64, tab_fields, Precision};
use crate::error::{Error, Result};

/// A predictor's score for one query variant.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub need_id: String,
    pub variant_id: String,
    pub predictor: String,
    pub score: f64,
}

/// True effectiveness of one query variant under one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueScoreRecord {
    pub need_id: String,
    pub variant_id: String,
    pub metric: String,
    pub value: f64,
}

fn parse_quads(text: &str, kind: &str) -> Result<Vec<(String, String, String, f64)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in data_lines(text) {
        let f = tab_fields(line, raw, 4)?;
        let key = (
            f[0].trim().to_string(),
            f[1].trim().to_string(),
            f[2].trim().to_string(),
        );
        if key.0.is_empty() || key.1.is_empty() || key.2.is_empty() {
            return Err(Error::parse(line, "empty identifier field"));
        }
        let value = parse_f64(line, kind, f[3])?;
        if !seen.insert(key.clone()) {
            return Err(Error::parse(
                line,
                format!("duplicate record ({}, {}, {})", key.0, key.1, key.2),
            ));
        }
        out.push((key.0, key.1, key.2, value));
    }
    Ok(out)
}

/// Parse `need_id \t variant_id \t predictor \t score`. Scores from external
/// predictors (e.g. supervised neural QPP) use the same format.
pub fn parse_predictor_scores(text: &str) -> Result<Vec<PredictionRecord>> {
    Ok(parse_quads(text, "score")?
        .into_iter()
        .map(|(need_id, variant_id, predictor, score)| PredictionRecord {
            need_id,
            variant_id,
            predictor,
            score,
        })
        .collect())
}

/// Parse `need_id \t variant_id \t metric \t value`, with values in [0, 1].
pub fn parse_true_scores(text: &str) -> Result<Vec<TrueScoreRecord>> {
    parse_quads(text, "value")?
        .into_iter()
        .map(|(need_id, variant_id, metric, value)| {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::InvalidRecord {
                    record: format!("true score ({need_id}, {variant_id}, {metric})"),
                    field: "value".into(),
                    message: format!("{value} outside [0, 1]"),
                });
            }
            Ok(TrueScoreRecord {
                need_id,
                variant_id,
                metric,
                value,
            })
        })
        .collect()
}

pub fn write_predictor_scores(records: &[PredictionRecord], precision: Precision) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.need_id,
            r.variant_id,
            r.predictor,
            precision.format(r.score)
        );
    }
    out
}

pub fn write_true_scores(records: &[TrueScoreRecord], precision: Precision) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.need_id,
            r.variant_id,
            r.metric,
            precision.format(r.value)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_scores() {
        assert!(parse_predictor_scores("n1\tv00\tnqc\tNaN\n").is_err());
        assert!(parse_predictor_scores("n1\tv00\tnqc\n").is_err());
        assert!(parse_predictor_scores("n1\tv00\tnqc\t1\nn1\tv00\tnqc\t2\n").is_err());
        assert!(parse_true_scores("n1\tv00\tndcg@5\t1.2\n").is_err());
    }

    #[test]
    fn external_predictor_names_pass_through() {
        let r = parse_predictor_scores("n1\tv03\tbertqpp_cross\t-0.75\n").unwrap();
        assert_eq!(r[0].predictor, "bertqpp_cross");
        assert_eq!(r[0].score, -0.75);
    }

    proptest! {
        #[test]
        fn round_trip(scores in prop::collection::vec(-1e6f64..1e6, 0..20)) {
            let recs: Vec<PredictionRecord> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| PredictionRecord {
                    need_id: format!("n{}", i % 3),
                    variant_id: format!("v{i:02}"),
                    predictor: "wig".into(),
                    score: s,
                })
                .collect();
            let back = parse_predictor_scores(&write_predictor_scores(&recs, Precision::Lossless)).unwrap();
            prop_assert_eq!(back, recs);
        }
    }
}
