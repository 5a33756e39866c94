use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::data_lines;
use crate::error::{Error, Result};

pub const MAX_GRADE: u8 = 3;

/// Graded judgments keyed by information need; every variant of a need is
/// evaluated against the same judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    needs: BTreeMap<String, BTreeMap<String, u8>>,
}

impl Qrels {
    pub fn insert(&mut self, need_id: &str, doc_id: &str, grade: u8) -> Result<()> {
        if grade > MAX_GRADE {
            return Err(Error::InvalidRecord {
                record: format!("qrel ({need_id}, {doc_id})"),
                field: "grade".into(),
                message: format!("{grade} outside [0, {MAX_GRADE}]"),
            });
        }
        self.needs
            .entry(need_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade);
        Ok(())
    }

    /// Grade of a document; unjudged documents are grade 0.
    pub fn grade(&self, need_id: &str, doc_id: &str) -> u8 {
        self.needs
            .get(need_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judgments(&self, need_id: &str) -> Option<&BTreeMap<String, u8>> {
        self.needs.get(need_id)
    }

    pub fn contains_need(&self, need_id: &str) -> bool {
        self.needs.contains_key(need_id)
    }

    pub fn needs(&self) -> impl Iterator<Item = &str> {
        self.needs.keys().map(String::as_str)
    }
}

/// Parse `need_id 0 doc_id grade` lines.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for (line, raw) in data_lines(text) {
        let cols: Vec<&str> = raw.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                line,
                format!(
                    "expected 4 columns `need_id 0 doc_id grade`, found {}",
                    cols.len()
                ),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(line, format!("grade: `{}` is not an integer", cols[3])))?;
        if !(0..=MAX_GRADE as i64).contains(&grade) {
            return Err(Error::parse(
                line,
                format!("grade {grade} outside [0, {MAX_GRADE}]"),
            ));
        }
        qrels.insert(cols[0], cols[2], grade as u8)?;
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (need, docs) in &qrels.needs {
        for (doc, grade) in docs {
            let _ = writeln!(out, "{need} 0 {doc} {grade}");
        }
    }
    out
}
