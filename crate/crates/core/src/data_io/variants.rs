use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::{data_lines, tab_fields};
use crate::error::{Error, Result};
use crate::ORIGINAL_VARIANT;

/// How a variant was produced.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Original,
    GenQr,
    GenQrEnsemble,
    MuGi,
    QaExpand,
    Query2Doc,
    Query2Exp,
    Other(String),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Original => "original",
            Method::GenQr => "GenQR",
            Method::GenQrEnsemble => "GenQR-Ensemble",
            Method::MuGi => "MuGI",
            Method::QaExpand => "QA-Expand",
            Method::Query2Doc => "Query2Doc",
            Method::Query2Exp => "Query2Exp",
            Method::Other(s) => s,
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "original" => Method::Original,
            "GenQR" => Method::GenQr,
            "GenQR-Ensemble" => Method::GenQrEnsemble,
            "MuGI" => Method::MuGi,
            "QA-Expand" => Method::QaExpand,
            "Query2Doc" => Method::Query2Doc,
            "Query2Exp" => Method::Query2Exp,
            other => Method::Other(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryVariant {
    pub need_id: String,
    pub variant_id: String,
    pub method: Method,
    pub text: String,
}

/// All variants of one information need, sorted by variant id. Always
/// contains exactly one original query, with id `v00`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantSet {
    pub need_id: String,
    pub variants: Vec<QueryVariant>,
}

impl VariantSet {
    pub fn original(&self) -> &QueryVariant {
        self.variants
            .iter()
            .find(|v| v.method == Method::Original)
            .expect("VariantSet invariant: contains the original")
    }

    pub fn get(&self, variant_id: &str) -> Option<&QueryVariant> {
        self.variants.iter().find(|v| v.variant_id == variant_id)
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

/// Parse `need_id \t variant_id \t method \t text` rows into one set per need.
pub fn parse_variants(text: &str) -> Result<Vec<VariantSet>> {
    let mut needs: BTreeMap<String, BTreeMap<String, QueryVariant>> = BTreeMap::new();
    for (line, raw) in data_lines(text) {
        let f = tab_fields(line, raw, 4)?;
        let (need_id, variant_id) = (f[0].trim(), f[1].trim());
        if need_id.is_empty() || variant_id.is_empty() {
            return Err(Error::parse(line, "empty need_id or variant_id"));
        }
        let method: Method = f[2].trim().parse().unwrap();
        let is_original = method == Method::Original;
        if is_original != (variant_id == ORIGINAL_VARIANT) {
            return Err(Error::InvalidRecord {
                record: format!("variant ({need_id}, {variant_id}) on line {line}"),
                field: "method".into(),
                message: format!(
                    "the original query must be variant `{ORIGINAL_VARIANT}` with method `original`"
                ),
            });
        }
        let variant = QueryVariant {
            need_id: need_id.to_string(),
            variant_id: variant_id.to_string(),
            method,
            text: unescape(f[3]),
        };
        if needs
            .entry(need_id.to_string())
            .or_default()
            .insert(variant_id.to_string(), variant)
            .is_some()
        {
            return Err(Error::parse(
                line,
                format!("duplicate variant ({need_id}, {variant_id})"),
            ));
        }
    }

    needs
        .into_iter()
        .map(|(need_id, variants)| {
            if !variants.contains_key(ORIGINAL_VARIANT) {
                return Err(Error::InvalidRecord {
                    record: format!("need {need_id}"),
                    field: "method".into(),
                    message: "no variant tagged `original`".into(),
                });
            }
            Ok(VariantSet {
                need_id,
                variants: variants.into_values().collect(),
            })
        })
        .collect()
}

pub fn write_variants(sets: &[VariantSet]) -> String {
    let mut out = String::new();
    for set in sets {
        for v in &set.variants {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                v.need_id,
                v.variant_id,
                v.method,
                escape(&v.text)
            );
        }
    }
    out
}
