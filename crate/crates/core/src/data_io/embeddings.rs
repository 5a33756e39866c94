use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{data_lines, parse_f64, tab_fields, Precision};
use crate::error::{Error, Result};

/// Dense vectors keyed by id, all of one dimension.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        let id = id.into();
        if self.vectors.is_empty() && self.dim == 0 {
            self.dim = vector.len();
        }
        if vector.len() != self.dim || self.dim == 0 {
            return Err(Error::InvalidRecord {
                record: format!("embedding `{id}`"),
                field: "vector".into(),
                message: format!("dimension {} != store dimension {}", vector.len(), self.dim),
            });
        }
        if let Some(i) = vector.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidRecord {
                record: format!("embedding `{id}`"),
                field: format!("component {i}"),
                message: "not finite".into(),
            });
        }
        self.vectors.insert(id, vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.vectors.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.vectors.values().cloned().collect()
    }
}

fn parse_vector(line: usize, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .enumerate()
        .map(|(i, x)| parse_f64(line, &format!("component {i}"), x))
        .collect()
}

fn format_vector(v: &[f64], precision: Precision) -> String {
    v.iter()
        .map(|x| precision.format(*x))
        .collect::<Vec<_>>()
        .join(",")
}

/// Parse `id \t f1,f2,…,fd` rows.
pub fn parse_embeddings(text: &str) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::default();
    for (line, raw) in data_lines(text) {
        let f = tab_fields(line, raw, 2)?;
        let id = f[0].trim();
        if store.get(id).is_some() {
            return Err(Error::parse(line, format!("duplicate embedding id `{id}`")));
        }
        let v = parse_vector(line, f[1])?;
        store
            .insert(id, v)
            .map_err(|e| Error::parse(line, e.to_string()))?;
    }
    Ok(store)
}

pub fn write_embeddings(store: &EmbeddingStore, precision: Precision) -> String {
    let mut out = String::new();
    for (id, v) in store.iter() {
        let _ = writeln!(out, "{id}\t{}", format_vector(v, precision));
    }
    out
}

/// A past query with known effectiveness, used by the query-space
/// predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub query_id: String,
    pub embedding: Vec<f64>,
    pub effectiveness: f64,
    /// Top-k documents the query retrieved, if recorded.
    pub top_docs: Option<BTreeSet<String>>,
}

/// Parse `id \t effectiveness \t f1,…,fd [\t doc1,doc2,…]` rows.
pub fn parse_history(text: &str) -> Result<Vec<HistoryEntry>> {
    let mut out: Vec<HistoryEntry> = Vec::new();
    let mut dim = None;
    for (line, raw) in data_lines(text) {
        let fields: Vec<&str> = raw.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::parse(
                line,
                format!(
                    "expected 3 or 4 tab-separated fields, found {}",
                    fields.len()
                ),
            ));
        }
        let effectiveness = parse_f64(line, "effectiveness", fields[1])?;
        if !(0.0..=1.0).contains(&effectiveness) {
            return Err(Error::parse(
                line,
                format!("effectiveness {effectiveness} outside [0, 1]"),
            ));
        }
        let embedding = parse_vector(line, fields[2])?;
        match dim {
            None => dim = Some(embedding.len()),
            Some(d) if d != embedding.len() => {
                return Err(Error::parse(
                    line,
                    format!("embedding dimension {} != {d}", embedding.len()),
                ))
            }
            _ => {}
        }
        let top_docs = fields.get(3).map(|docs| {
            docs.split(',')
                .map(str::trim)
                .filter(|d| !d.is_empty())
                .map(String::from)
                .collect()
        });
        out.push(HistoryEntry {
            query_id: fields[0].trim().to_string(),
            embedding,
            effectiveness,
            top_docs,
        });
    }
    Ok(out)
}

pub fn write_history(history: &[HistoryEntry], precision: Precision) -> String {
    let mut out = String::new();
    for h in history {
        let _ = write!(
            out,
            "{}\t{}\t{}",
            h.query_id,
            precision.format(h.effectiveness),
            format_vector(&h.embedding, precision)
        );
        if let Some(docs) = &h.top_docs {
            let _ = write!(
                out,
                "\t{}",
                docs.iter().cloned().collect::<Vec<_>>().join(",")
            );
        }
        out.push('\n');
    }
    out
}
