//! Readers and writers for every on-disk artifact: corpora, TREC run files,
//! qrels, query variants, embeddings, query history, nugget judgments,
//! predictor scores and true-score tables.
//!
//! Parsers validate type invariants up front so the rest of the crate can
//! rely on them.

mod corpus;
mod embeddings;
mod nuggets;
mod qrels;
mod records;
mod runs;
mod variants;

pub use corpus::{parse_corpus_jsonl, parse_corpus_tsv, read_corpus};
pub use embeddings::{
    parse_embeddings, parse_history, write_embeddings, write_history, EmbeddingStore, HistoryEntry,
};
pub use nuggets::{
    parse_nuggets, write_nuggets, Importance, NeedNuggets, Nugget, NuggetJudgments, Support,
};
pub use qrels::{parse_qrels, write_qrels, Qrels, MAX_GRADE};
pub use records::{
    parse_predictor_scores, parse_true_scores, write_predictor_scores, write_true_scores,
    PredictionRecord, TrueScoreRecord,
};
pub use runs::{parse_run_file, split_qid, write_run_file};
pub use variants::{parse_variants, write_variants, Method, QueryVariant, VariantSet};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A parsed value together with non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// How floating point numbers are rendered in output files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Shortest representation that parses back to the same `f64`.
    Lossless,
    Fixed(usize),
}

impl Default for Precision {
    fn default() -> Self {
        Precision::Fixed(4)
    }
}

impl Precision {
    pub fn format(self, x: f64) -> String {
        match self {
            Precision::Lossless => format!("{x}"),
            Precision::Fixed(p) => format!("{x:.p$}"),
        }
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write a file by renaming a sibling temp file over the destination, so a
/// failed stage never leaves a truncated output behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Iterate over non-blank, non-comment lines with 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_f64(line: usize, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("{field}: `{raw}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            line,
            format!("{field}: `{raw}` is not finite"),
        ));
    }
    Ok(v)
}

pub(crate) fn tab_fields(line: usize, raw: &str, expected: usize) -> Result<Vec<&str>> {
    let fields: Vec<&str> = raw.split('\t').collect();
    if fields.len() != expected {
        return Err(Error::parse(
            line,
            format!(
                "expected {expected} tab-separated fields, found {}",
                fields.len()
            ),
        ));
    }
    Ok(fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_formats() {
        assert_eq!(Precision::default().format(0.398), "0.3980");
        assert_eq!(Precision::Fixed(2).format(1.0 / 3.0), "0.33");
        let x = 0.1 + 0.2;
        assert_eq!(Precision::Lossless.format(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.tsv");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let leftovers: Vec<_> = std::fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }
}
