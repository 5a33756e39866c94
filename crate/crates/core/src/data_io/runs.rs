use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{data_lines, parse_f64, Parsed, Precision};
use crate::error::{Error, Result};
use crate::index::{RankedList, ScoredDoc};
use crate::ORIGINAL_VARIANT;

/// Split a composite `<need_id>.<variant_id>` qid at its last dot. A qid
/// without a dot is taken as the original query of that need.
pub fn split_qid(qid: &str) -> (&str, &str) {
    match qid.rsplit_once('.') {
        Some((need, variant)) if !need.is_empty() && !variant.is_empty() => (need, variant),
        _ => (qid, ORIGINAL_VARIANT),
    }
}

struct RawEntry {
    line: usize,
    doc_id: String,
    rank: i64,
    score: f64,
}

/// Parse a six-column TREC run (`qid Q0 docid rank score tag`).
///
/// Lists come back sorted by `(need_id, variant_id)`; entries are ordered by
/// score descending, then rank ascending.
pub fn parse_run_file(text: &str) -> Result<Parsed<Vec<RankedList>>> {
    let mut groups: BTreeMap<(String, String), Vec<RawEntry>> = BTreeMap::new();
    let mut seen: BTreeMap<(String, String), usize> = BTreeMap::new();

    for (line, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                line,
                format!(
                    "expected 6 whitespace-separated columns, found {}",
                    cols.len()
                ),
            ));
        }
        let qid = cols[0];
        let doc_id = cols[2];
        let rank: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(line, format!("rank: `{}` is not an integer", cols[3])))?;
        let score = parse_f64(line, "score", cols[4])?;

        if let Some(first) = seen.insert((qid.to_string(), doc_id.to_string()), line) {
            return Err(Error::parse(
                line,
                format!("duplicate document `{doc_id}` for qid `{qid}` (lines {first} and {line})"),
            ));
        }
        let (need, variant) = split_qid(qid);
        groups
            .entry((need.to_string(), variant.to_string()))
            .or_default()
            .push(RawEntry {
                line,
                doc_id: doc_id.to_string(),
                rank,
                score,
            });
    }

    let mut warnings = Vec::new();
    let lists = groups
        .into_iter()
        .map(|((need, variant), mut entries)| {
            entries.sort_by(|a, b| {
                b.score
                    .total_cmp(&a.score)
                    .then(a.rank.cmp(&b.rank))
                    .then(a.line.cmp(&b.line))
            });
            if entries.windows(2).any(|w| w[0].rank > w[1].rank) {
                warnings.push(format!(
                    "{need}.{variant}: rank order disagrees with score order; using score order"
                ));
            }
            RankedList::new(
                need,
                variant,
                entries
                    .into_iter()
                    .map(|e| ScoredDoc {
                        doc_id: e.doc_id,
                        score: e.score,
                    })
                    .collect(),
            )
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Parsed {
        value: lists,
        warnings,
    })
}

pub fn write_run_file(lists: &[RankedList], tag: &str, precision: Precision) -> String {
    let mut out = String::new();
    for list in lists {
        for (i, e) in list.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}.{} Q0 {} {} {} {}",
                list.need_id,
                list.variant_id,
                e.doc_id,
                i + 1,
                precision.format(e.score),
                tag
            );
        }
    }
    out
}
